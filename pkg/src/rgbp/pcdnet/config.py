"""Network configuration and its flat ``key = value`` text form."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..errors import ValidationError

DEFAULT_ANCHORS = (
    ((6.0, 6.0), (10.0, 6.0), (6.0, 10.0)),
    ((12.0, 12.0), (20.0, 12.0), (12.0, 20.0)),
    ((24.0, 24.0), (40.0, 24.0), (24.0, 40.0)),
)


@dataclass(frozen=True)
class NetworkConfig:
    """Toy twin-encoder settings.

    ``mp_assignment`` holds one letter per stage: ``S`` for spatial
    perception, ``C`` for channel perception, ``N`` for none.
    ``fusion_stages`` are 1-based stage numbers that get cross-domain fusion;
    other stages pass the RGB feature straight to the head.
    """

    c_pi: int = 16
    widths: tuple[int, ...] = (16, 32, 64)
    mp_assignment: tuple[str, ...] = ("S", "S", "C")
    fusion_stages: tuple[int, ...] = (1, 2, 3)
    anchors: tuple[tuple[tuple[float, float], ...], ...] = DEFAULT_ANCHORS
    nms_iou: float = 0.45
    score_thresh: float = 0.25
    max_det: int = 100
    seed: int = 0
    mp_reduction: int = 4
    cwda_hidden: int = 0  # 0 means "same as the stage width"
    use_sdmd: bool = True
    use_cwda: bool = True

    def __post_init__(self):
        if self.c_pi <= 0 or self.c_pi % 2:
            raise ValidationError(f"c_pi must be positive and even, got {self.c_pi}", "c_pi")
        if not self.widths or any(w <= 0 or w % 2 for w in self.widths):
            raise ValidationError(f"widths must be positive and even, got {self.widths}", "widths")
        if len(self.mp_assignment) != len(self.widths):
            raise ValidationError("mp_assignment needs one entry per stage", "mp_assignment")
        if any(a not in ("S", "C", "N") for a in self.mp_assignment):
            raise ValidationError(f"mp_assignment letters must be S, C or N: {self.mp_assignment}", "mp_assignment")
        if any(s < 1 or s > len(self.widths) for s in self.fusion_stages):
            raise ValidationError(f"fusion_stages out of range: {self.fusion_stages}", "fusion_stages")
        if len(self.anchors) != len(self.widths) or any(len(a) == 0 for a in self.anchors):
            raise ValidationError("anchors need a non-empty list per stage", "anchors")
        if len({len(a) for a in self.anchors}) != 1:
            raise ValidationError("every stage needs the same number of anchors", "anchors")
        if any(w <= 0 or h <= 0 for level in self.anchors for w, h in level):
            raise ValidationError("anchor sizes must be positive", "anchors")
        if self.mp_reduction < 1:
            raise ValidationError("mp_reduction must be >= 1", "mp_reduction")
        for i, (w, a) in enumerate(zip(self.widths, self.mp_assignment)):
            if a == "C" and w % self.mp_reduction:
                raise ValidationError(f"stage {i + 1} width {w} not divisible by mp_reduction", "mp_reduction")
        if not 0.0 <= self.nms_iou <= 1.0 or not 0.0 <= self.score_thresh <= 1.0:
            raise ValidationError("nms_iou and score_thresh must lie in [0, 1]")

    @property
    def stages(self) -> int:
        return len(self.widths)

    @property
    def num_anchors(self) -> int:
        return len(self.anchors[0])

    @property
    def min_divisor(self) -> int:
        """Input height and width must be multiples of this."""
        return 2 ** (self.stages + 2)

    def with_overrides(self, **kw) -> "NetworkConfig":
        return replace(self, **kw)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format_value(f.name, getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "NetworkConfig":
        values = {}
        known = {f.name for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"expected 'key = value', got {raw!r}", f"line {lineno}")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in known:
                raise ValidationError(f"unknown config key {key!r}", f"line {lineno}")
            try:
                values[key] = parse_value(key, value)
            except ValueError as exc:
                raise ValidationError(f"bad value for {key}: {value!r}", f"line {lineno}") from exc
        return cls(**values)

    @classmethod
    def load(cls, path) -> "NetworkConfig":
        return cls.loads(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def _parse_bool(v: str) -> bool:
    v = v.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(v)


def parse_value(key: str, value: str):
    """Parse one config value from its text form."""
    if key in ("c_pi", "max_det", "seed", "mp_reduction", "cwda_hidden"):
        return int(value)
    if key in ("nms_iou", "score_thresh"):
        return float(value)
    if key in ("use_sdmd", "use_cwda"):
        return _parse_bool(value)
    if key in ("widths", "fusion_stages"):
        return tuple(int(v) for v in value.split(",") if v.strip())
    if key == "mp_assignment":
        return tuple(v.strip().upper() for v in value.replace("-", ",").split(",") if v.strip())
    if key == "anchors":
        levels = []
        for level in value.split(";"):
            pairs = []
            for pair in level.split(","):
                w, h = pair.lower().split("x")
                pairs.append((float(w), float(h)))
            levels.append(tuple(pairs))
        return tuple(levels)
    raise ValueError(key)


def _format_value(key: str, value) -> str:
    if key == "anchors":
        return ";".join(",".join(f"{w:g}x{h:g}" for w, h in level) for level in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)
