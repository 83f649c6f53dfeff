"""Slow, loop-based single-class AP used as an independent oracle."""


def ref_iou(a, b):
    ax2, ay2 = a[0] + a[2], a[1] + a[3]
    bx2, by2 = b[0] + b[2], b[1] + b[3]
    w = min(ax2, bx2) - max(a[0], b[0])
    h = min(ay2, by2) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def ref_ap_at(dets, gts, thresh):
    """dets: list of (image, box, score); gts: list of (image, box)."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i][2])
    used = set()
    tp_flags = []
    for i in order:
        img, box, _ = dets[i]
        best, best_j = -1.0, None
        for j, (gimg, gbox) in enumerate(gts):
            if gimg != img or j in used:
                continue
            v = ref_iou(box, gbox)
            if v > best:
                best, best_j = v, j
        if best_j is not None and best >= thresh:
            used.add(best_j)
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    n = len(gts)
    if n == 0 or not dets:
        return 0.0
    points = []
    tp = fp = 0
    for f in tp_flags:
        tp += f
        fp += not f
        points.append((tp / n, tp / (tp + fp)))
    total = 0.0
    for k in range(101):
        r = k / 100
        total += max((p for rec, p in points if rec >= r), default=0.0)
    return total / 101


def ref_coco(dets, gts):
    thresholds = [(50 + 5 * i) / 100 for i in range(10)]
    aps = [ref_ap_at(dets, gts, t) for t in thresholds]
    return sum(aps) / 10, aps[0], aps[5]
