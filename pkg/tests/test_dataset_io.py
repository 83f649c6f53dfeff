import json

import numpy as np
import pytest

from rgbp.dataset_io import (
    AnnotationSet,
    DetectionSet,
    ExternalTripletSource,
    SynthParams,
    TripletSample,
    dumps_annotations,
    list_stems,
    load_annotations,
    load_triplet,
    parse_annotations,
    save_annotations,
    save_triplet,
    synth_scene,
    to_uint8,
    triplet_from_quad,
)
from rgbp.containers import save_tensor
from rgbp.errors import AlignmentError, PlacementError, ValidationError
from rgbp.mosaic import extract_quad


def sample(rng, h=8, w=8, image_id=3):
    return TripletSample(rng.uniform(0, 1, (1, 3, h, w)), rng.uniform(0, 3.1, (1, 3, h, w)),
                         rng.uniform(0, 1, (1, 3, h, w)), image_id)


def test_triplet_round_trip(rng, tmp_path):
    s = sample(rng)
    save_triplet(tmp_path, s)
    assert list_stems(tmp_path) == ["000003"]
    back = load_triplet(tmp_path, 3)
    assert back.rgb.shape == back.aolp.shape == back.dolp.shape == (1, 3, 8, 8)
    assert np.allclose(back.aolp, s.aolp, atol=1e-6)
    assert np.allclose(back.dolp, s.dolp, atol=1e-7)


def test_triplet_errors(rng, tmp_path):
    save_triplet(tmp_path, sample(rng))
    with pytest.raises(FileNotFoundError):
        load_triplet(tmp_path, 4)
    save_tensor(tmp_path / "aolp" / "000003.rgbpt", np.zeros((1, 3, 8, 6), np.float32))
    with pytest.raises(AlignmentError):
        load_triplet(tmp_path, 3)
    save_tensor(tmp_path / "aolp" / "000003.rgbpt", np.zeros((1, 3, 8, 8), np.float32))
    bad = np.full((1, 3, 8, 8), 0.5, np.float32)
    bad[0, 1, 2, 2] = 1.2
    save_tensor(tmp_path / "dolp" / "000003.rgbpt", bad)
    with pytest.raises(ValidationError) as exc:
        load_triplet(tmp_path, 3)
    assert exc.value.location == "dolp[0, 1, 2, 2]"


def test_aolp_error_message_names_both_shapes(rng, tmp_path):
    save_triplet(tmp_path, sample(rng))
    save_tensor(tmp_path / "aolp" / "000003.rgbpt", np.zeros((1, 3, 8, 6), np.float32))
    with pytest.raises(AlignmentError) as exc:
        load_triplet(tmp_path, 3)
    assert "(1, 3, 8, 6)" in str(exc.value) and "(1, 3, 8, 8)" in str(exc.value)


GOOD = {
    "images": [{"id": 1, "width": 64, "height": 48, "file": "a"}],
    "annotations": [{"image_id": 1, "bbox": [1, 2, 3, 4]}],
}


def test_annotation_parse_and_round_trip(tmp_path):
    a = parse_annotations(GOOD)
    assert isinstance(a, AnnotationSet) and a.annotations[0].box == (1.0, 2.0, 3.0, 4.0)
    save_annotations(tmp_path / "a.json", a)
    text = (tmp_path / "a.json").read_text()
    again = dumps_annotations(load_annotations(tmp_path / "a.json"))
    assert again == text
    assert json.loads(text)["annotations"][0]["bbox"] == [1.0, 2.0, 3.0, 4.0]

    doc = json.loads(json.dumps(GOOD))
    doc["annotations"][0]["score"] = 0.25
    d = parse_annotations(doc)
    assert isinstance(d, DetectionSet) and d.detections[0].score == 0.25
    assert '"score": 0.250000' in dumps_annotations(d)


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda d: d["annotations"][0]["bbox"].__setitem__(2, 0), "$.annotations[0].bbox[2]"),
        (lambda d: d["annotations"][0]["bbox"].__setitem__(3, -1), "$.annotations[0].bbox[3]"),
        (lambda d: d["annotations"][0].pop("bbox"), "$.annotations[0].bbox"),
        (lambda d: d["annotations"][0].__setitem__("image_id", 9), "$.annotations[0].image_id"),
        (lambda d: d["images"][0].pop("width"), "$.images[0].width"),
        (lambda d: d.pop("images"), "$.images"),
        (lambda d: d["annotations"].append({"image_id": 1, "bbox": [0, 0, 1, 1], "score": 0.5}),
         "$.annotations[1].score"),
    ],
)
def test_annotation_errors(mutate, path):
    doc = json.loads(json.dumps(GOOD))
    mutate(doc)
    with pytest.raises(ValidationError) as exc:
        parse_annotations(doc)
    assert exc.value.location == path


def test_malformed_json(tmp_path):
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(ValidationError):
        load_annotations(tmp_path / "x.json")


def test_synth_deterministic():
    p = SynthParams(seed=7, boxes=(2, 2))
    a, b = synth_scene(p), synth_scene(p)
    assert len(a.annotations.annotations) == 2
    assert a.annotations == b.annotations
    assert a.frame.data.tobytes() == b.frame.data.tobytes()
    assert synth_scene(SynthParams(seed=8, boxes=(2, 2))).frame.data.tobytes() != a.frame.data.tobytes()


@pytest.mark.parametrize("color", [True, False])
def test_synth_noiseless_pipeline(color):
    sc = synth_scene(SynthParams(seed=7, boxes=(3, 3), color=color))
    tr, _ = triplet_from_quad(extract_quad(sc.frame))
    d = np.abs(tr.aolp - sc.truth.aolp)
    assert np.max(np.minimum(d, np.pi - d)) < 1e-6
    assert np.max(np.abs(tr.dolp - sc.truth.dolp)) < 1e-6
    inside = np.zeros(tr.dolp.shape[2:], bool)
    for g in sc.annotations.annotations:
        x, y, w, h = map(int, g.box)
        inside[y : y + h, x : x + w] = True
    assert tr.dolp[0][:, inside].mean() > 0.5
    assert tr.dolp[0][:, ~inside].mean() < 0.05


def test_synth_boxes_do_not_overlap():
    for seed in range(20):
        boxes = [g.box for g in synth_scene(SynthParams(seed=seed, boxes=(4, 4))).annotations.annotations]
        for i, a in enumerate(boxes):
            for b in boxes[i + 1 :]:
                assert a[0] + a[2] <= b[0] or b[0] + b[2] <= a[0] or a[1] + a[3] <= b[1] or b[1] + b[3] <= a[1]


def test_synth_noise_and_placement_errors():
    noisy = synth_scene(SynthParams(seed=1, noise=0.01))
    clean = synth_scene(SynthParams(seed=1))
    assert not np.array_equal(noisy.frame.data, clean.frame.data)
    assert np.all(noisy.frame.data >= 0)
    with pytest.raises(PlacementError):
        synth_scene(SynthParams(height=16, width=16, boxes=(5, 5), box_size=(12, 12), max_tries=20))
    with pytest.raises(ValidationError):
        SynthParams(obj_dolp=(0.5, 1.5))


def test_to_uint8():
    a = to_uint8(aolp=np.array([0.0, np.pi / 2, np.pi * 0.999]))
    assert a.dtype == np.uint8 and list(a) == [0, 128, 255]
    assert list(to_uint8(dolp=np.array([0.0, 0.5, 1.0]))) == [0, 128, 255]


def test_external_adapter_is_a_stub(tmp_path):
    with pytest.raises(NotImplementedError):
        ExternalTripletSource(tmp_path).stems()
