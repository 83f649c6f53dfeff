"""Linear-polarization math: Stokes parameters, AoLP/DoLP and their inverse.

Planes are numpy arrays of shape ``(H, W)`` or ``(H, W, C)`` with ``C`` in
{1, 3}. Computations keep the input float dtype; integer input is promoted
to float32, the storage precision used by the rest of the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

EPS_S0 = 1e-8
ANGLES_DEG = (0, 45, 90, 135)


def _as_plane(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if not np.issubdtype(a.dtype, np.floating):
        a = a.astype(np.float32)
    if a.ndim not in (2, 3):
        raise ShapeError(f"{name} must be HxW or HxWxC, got shape {a.shape}", name)
    if a.ndim == 3 and a.shape[2] not in (1, 3):
        raise ShapeError(f"{name} must have 1 or 3 color channels, got {a.shape[2]}", name)
    return a


def _check_same_shape(planes: dict[str, np.ndarray]) -> None:
    shapes = {k: v.shape for k, v in planes.items()}
    if len(set(shapes.values())) != 1:
        raise ShapeError(f"plane shapes differ: {shapes}")


def _check_finite(planes: dict[str, np.ndarray]) -> None:
    for k, v in planes.items():
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"{k} contains NaN or Inf", k)


@dataclass(frozen=True)
class QuadIntensities:
    """Intensity behind polarizers at 0, 45, 90 and 135 degrees."""

    i0: np.ndarray
    i45: np.ndarray
    i90: np.ndarray
    i135: np.ndarray

    def __post_init__(self):
        planes = {}
        for name in ("i0", "i45", "i90", "i135"):
            planes[name] = _as_plane(getattr(self, name), name)
            object.__setattr__(self, name, planes[name])
        _check_same_shape(planes)
        _check_finite(planes)
        for k, v in planes.items():
            if np.any(v < 0):
                raise ValidationError(f"{k} contains negative intensities", k)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.i0.shape

    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.i0, self.i45, self.i90, self.i135


@dataclass(frozen=True)
class StokesImage:
    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        planes = {}
        for name in ("s0", "s1", "s2"):
            planes[name] = _as_plane(getattr(self, name), name)
            object.__setattr__(self, name, planes[name])
        _check_same_shape(planes)
        _check_finite(planes)
        if np.any(planes["s0"] < 0):
            raise ValidationError("s0 must be non-negative", "s0")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.s0.shape


@dataclass(frozen=True)
class PolarMaps:
    """AoLP in radians within [0, pi) and DoLP within [0, 1]."""

    aolp: np.ndarray
    dolp: np.ndarray

    def __post_init__(self):
        aolp = _as_plane(self.aolp, "aolp")
        dolp = _as_plane(self.dolp, "dolp")
        object.__setattr__(self, "aolp", aolp)
        object.__setattr__(self, "dolp", dolp)
        _check_same_shape({"aolp": aolp, "dolp": dolp})
        _check_finite({"aolp": aolp, "dolp": dolp})


def compute_stokes(quad: QuadIntensities) -> StokesImage:
    """Stokes planes from the four polarizer intensities.

    ``s0`` averages the two redundant estimates ``i0 + i90`` and
    ``i45 + i135``; their disagreement is reported by
    :func:`consistency_residual`.
    """
    i0, i45, i90, i135 = quad.planes()
    s0 = ((i0 + i90) + (i45 + i135)) / 2
    return StokesImage(s0=s0, s1=i0 - i90, s2=i45 - i135)


def compute_polar_maps(stokes: StokesImage, eps: float = EPS_S0) -> PolarMaps:
    s0, s1, s2 = stokes.s0, stokes.s1, stokes.s2
    mag = np.hypot(s1, s2)
    aolp = 0.5 * np.arctan2(s2, s1)
    aolp = np.where(aolp < 0, aolp + np.pi, aolp)
    # -pi/2 maps to exactly pi after the shift; fold it back into [0, pi)
    aolp = np.where(aolp >= np.pi, aolp - np.pi, aolp)
    aolp = np.where(mag <= eps, 0.0, aolp)

    safe_s0 = np.where(s0 > eps, s0, 1.0)
    dolp = np.where(s0 > eps, mag / safe_s0, 0.0)
    dolp = np.clip(dolp, 0.0, 1.0)
    dt = s0.dtype
    return PolarMaps(aolp=aolp.astype(dt, copy=False), dolp=dolp.astype(dt, copy=False))


def intensity_at(stokes: StokesImage, theta: float) -> np.ndarray:
    """Malus-form intensity behind an ideal linear polarizer at ``theta`` radians."""
    c, s = np.cos(2 * theta), np.sin(2 * theta)
    return 0.5 * (stokes.s0 + stokes.s1 * c + stokes.s2 * s)


def synthesize_intensities(stokes: StokesImage) -> QuadIntensities:
    s0, s1, s2 = stokes.s0, stokes.s1, stokes.s2
    mag = np.hypot(s1, s2)
    tol = 8 * np.finfo(s0.dtype).eps
    bad = mag > s0 * (1 + tol) + tol
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValidationError("Stokes vector has DoLP > 1", f"pixel {idx}")
    # exact cos/sin values at the four angles keep the round trip rounding-only
    i0 = 0.5 * (s0 + s1)
    i45 = 0.5 * (s0 + s2)
    i90 = 0.5 * (s0 - s1)
    i135 = 0.5 * (s0 - s2)
    # a fully polarized pixel can land a hair below zero
    return QuadIntensities(*(np.maximum(p, 0) for p in (i0, i45, i90, i135)))


def consistency_residual(quad: QuadIntensities, eps: float = EPS_S0) -> np.ndarray:
    i0, i45, i90, i135 = quad.planes()
    a = i0 + i90
    return np.abs(a - (i45 + i135)) / np.maximum(eps, a)


def stokes_from_polar(s0, aolp, dolp) -> StokesImage:
    """Build a Stokes image from intensity, AoLP and DoLP planes."""
    s0 = np.asarray(s0)
    return StokesImage(
        s0=s0,
        s1=s0 * dolp * np.cos(2 * np.asarray(aolp)),
        s2=s0 * dolp * np.sin(2 * np.asarray(aolp)),
    )
