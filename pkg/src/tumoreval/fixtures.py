"""Deterministic synthetic label/probability volumes (balls, shells, boxes).

Randomness comes from numpy's counter-based Philox generator keyed by the
spec seed, so output depends on nothing but the spec.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import PrimitiveOutOfBounds
from .volume import (
    BACKGROUND,
    ED,
    ET,
    NCR,
    REGION_CODES,
    REGIONS,
    Dims,
    LabelVolume,
    ProbVolume,
    Spacing,
    _as_spacing,
)

KINDS = ("ball", "shell", "box")
CLASS_CODES = {"NCR": NCR, "ED": ED, "ET": ET, "BG": BACKGROUND}


@dataclass(frozen=True)
class Primitive:
    """A shape painted with one class code.

    ``center`` is in voxel indices; ``radii`` in mm (scalar or per axis).
    For shells, ``inner`` is the inner radius in mm: voxels with
    inner < distance <= radius are painted and the core is left alone.
    """

    kind: str
    code: int
    center: tuple[float, float, float]
    radii: tuple[float, float, float] | float
    inner: float = 0.0
    level: float | None = None  # probability level inside; None uses the spec level

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        code = CLASS_CODES.get(str(self.code).upper(), self.code)
        object.__setattr__(self, "code", int(code))
        r = self.radii
        if np.isscalar(r):
            r = (float(r),) * 3
        object.__setattr__(self, "radii", tuple(float(v) for v in r))
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))


@dataclass(frozen=True)
class FixtureSpec:
    dims: Dims
    spacing: Spacing = field(default_factory=Spacing)
    seed: int = 0
    primitives: tuple[Primitive, ...] = ()
    level: float = 0.9
    jitter: float = 0.1

    @classmethod
    def from_dict(cls, d: dict) -> "FixtureSpec":
        prims = tuple(p if isinstance(p, Primitive) else Primitive(**p) for p in d.get("primitives", ()))
        dims = d["dims"]
        return cls(
            dims=dims if isinstance(dims, Dims) else Dims(*dims),
            spacing=_as_spacing(d.get("spacing")),
            seed=int(d.get("seed", 0)),
            primitives=prims,
            level=float(d.get("level", 0.9)),
            jitter=float(d.get("jitter", 0.1)),
        )


def _check_bounds(p: Primitive, dims: Dims, spacing: Spacing) -> None:
    for c, r, d, n in zip(p.center, p.radii, spacing.as_tuple(), dims.shape):
        ext = r / d
        if c - ext < -1e-9 or c + ext > n - 1 + 1e-9:
            raise PrimitiveOutOfBounds(f"{p.kind} at {p.center} with radii {p.radii} mm leaves a {dims.shape} grid")


def _footprint(p: Primitive, grids, spacing: Spacing) -> np.ndarray:
    offs = [(g - c) * d for g, c, d in zip(grids, p.center, spacing.as_tuple())]
    if p.kind == "box":
        return (np.abs(offs[0]) <= p.radii[0]) & (np.abs(offs[1]) <= p.radii[1]) & (np.abs(offs[2]) <= p.radii[2])
    # normalised ellipsoid radius; for a sphere this is distance / radius
    rho2 = sum((o / r) ** 2 for o, r in zip(offs, p.radii))
    outer = rho2 <= 1.0 + 1e-12
    if p.kind == "ball":
        return outer
    r_out = p.radii[0]
    inner = rho2 <= (p.inner / r_out) ** 2 + 1e-12
    return outer & ~inner


def generate(spec: FixtureSpec) -> tuple[LabelVolume, ProbVolume]:
    """Rasterise the primitives (last one wins) and derive consistent probabilities.

    Inside a region, its channel is level + u * jitter * (1 - level); outside,
    u * jitter * (1 - spec.level), with u uniform in [0, 1).
    """
    dims, spacing = spec.dims, spec.spacing
    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims.shape), indexing="ij", sparse=True)
    labels = np.zeros(dims.shape, dtype=np.uint8, order="F")
    level = np.full(dims.shape, spec.level, dtype=np.float64, order="F")
    for p in spec.primitives:
        _check_bounds(p, dims, spacing)
        fp = _footprint(p, grids, spacing)
        labels[fp] = p.code
        level[fp] = spec.level if p.level is None else p.level

    rng = np.random.Generator(np.random.Philox(spec.seed))
    outside_cap = spec.jitter * (1.0 - spec.level)
    chans = []
    for region in REGIONS:
        u = rng.random(dims.size).reshape(dims.shape, order="F")
        inside = np.isin(labels, REGION_CODES[region])
        p_in = level + u * spec.jitter * (1.0 - level)
        p_out = u * outside_cap
        chans.append(np.clip(np.where(inside, p_in, p_out), 0.0, 1.0).astype(np.float32))
    return LabelVolume(labels, spacing), ProbVolume(chans, spacing)


def ball(code, center, radius, level=None) -> Primitive:
    return Primitive("ball", code, tuple(center), radius, level=level)


def shell(code, center, radius, inner, level=None) -> Primitive:
    return Primitive("shell", code, tuple(center), radius, inner=inner, level=level)


def box(code, center, half_extent, level=None) -> Primitive:
    return Primitive("box", code, tuple(center), half_extent, level=level)


def random_spec(seed: int, shape: Sequence[int] = (24, 24, 24), n_primitives: int = 4, spacing=None, level: float = 0.9) -> FixtureSpec:
    """A random but reproducible multi-lesion layout that fits the grid."""
    rng = np.random.Generator(np.random.Philox(seed))
    dims = Dims(*shape)
    spacing = _as_spacing(spacing)
    prims = []
    for _ in range(n_primitives):
        kind = KINDS[int(rng.integers(0, 3))]
        code = (NCR, ED, ET)[int(rng.integers(0, 3))]
        max_r = min(n * d for n, d in zip(dims.shape, spacing.as_tuple())) / 4
        r = float(rng.uniform(1.0, max(1.0, max_r)))
        center = []
        for n, d in zip(dims.shape, spacing.as_tuple()):
            ext = r / d
            center.append(float(rng.uniform(ext, n - 1 - ext)))
        if kind == "shell":
            prims.append(shell(code, center, r, inner=r * float(rng.uniform(0.3, 0.7))))
        else:
            prims.append(Primitive(kind, code, tuple(center), r))
    return FixtureSpec(dims, spacing, seed, tuple(prims), level=level)


def two_lesion_layout(shape=(32, 32, 32), code: int = ET) -> tuple[LabelVolume, LabelVolume]:
    """(gt, pred): two far-apart balls in gt, pred reproducing only the first."""
    dims = Dims(*shape)
    a = ball(code, (8, 8, 8), 3)
    b = ball(code, (shape[0] - 9, shape[1] - 9, shape[2] - 9), 3)
    gt, _ = generate(FixtureSpec(dims, primitives=(a, b)))
    pred, _ = generate(FixtureSpec(dims, primitives=(a,)))
    return gt, pred


def hollow_et_case(shape=(15, 15, 15), radius: float = 5.0, inner: float = 3.0) -> tuple[LabelVolume, LabelVolume]:
    """(pred, gt): pred is an ET shell with a background core, gt has an NCR core."""
    dims = Dims(*shape)
    c = tuple((n - 1) / 2 for n in shape)
    pred, _ = generate(FixtureSpec(dims, primitives=(shell(ET, c, radius, inner),)))
    gt, _ = generate(FixtureSpec(dims, primitives=(ball(ET, c, radius), ball(NCR, c, inner))))
    return pred, gt
