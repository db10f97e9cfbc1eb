"""Seeded synthetic fields: lognormal power-law fields and Gaussian blobs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ToolkitError
from .field import PixelSize, ScalarField

_TWO_POW_M53 = 2.0**-53


@dataclass(frozen=True)
class SynthSpec:
    shape: Tuple[int, ...]
    beta: float = -3.0
    seed: int = 0
    kind: str = "gaussian_exp"
    sigma: float = 4.0
    center: Optional[Tuple[float, ...]] = None
    amplitude: float = 1.0
    pixel_size: Optional[PixelSize] = None

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        if self.kind not in ("gaussian_exp", "blob"):
            raise ToolkitError("BAD_PARAMS", f"unknown synth kind {self.kind!r}")
        if not self.shape or any(n < 1 for n in self.shape):
            raise ToolkitError("BAD_PARAMS", f"bad shape {self.shape}")
        if any(n != self.shape[0] for n in self.shape):
            raise ToolkitError("NON_CUBIC_GRID", f"synthetic grids must be square/cubic, got {self.shape}")
        if not 0 <= int(self.seed) < 2**64:
            raise ToolkitError("BAD_PARAMS", "seed must be a 64-bit unsigned integer")


def cell_normals(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Standard normal deviates for cells ``offset .. offset+count-1``.

    Cell ``i`` consumes the two 64-bit Philox outputs at counter positions
    ``2i`` and ``2i+1`` under key ``seed`` and maps them through Box-Muller,
    so every value is a pure function of ``(seed, i)``.
    """
    gen = np.random.Philox(key=int(seed))
    if offset:
        # Philox yields four words per counter increment.
        start = 2 * offset
        gen.advance(start // 4)
        skip = start % 4
    else:
        skip = 0
    raw = gen.random_raw(2 * count + skip)[skip:]
    a = raw[0::2]
    b = raw[1::2]
    u1 = ((a >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_POW_M53
    u2 = (b >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def gaussian_field(spec: SynthSpec) -> np.ndarray:
    """Zero-mean, unit-variance Gaussian random field with power ``~ k**beta``."""
    shape = spec.shape
    n = shape[0]
    noise = cell_normals(spec.seed, int(np.prod(shape))).reshape(shape)
    modes = np.fft.rfftn(noise)
    axes = [np.fft.fftfreq(n, d=1.0 / n)] * (len(shape) - 1) + [np.fft.rfftfreq(n, d=1.0 / n)]
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    k2 = sum(g**2 for g in grids)
    with np.errstate(divide="ignore"):
        amp = np.where(k2 > 0, k2 ** (spec.beta / 4.0), 0.0)
    g = np.fft.irfftn(modes * amp, s=shape, axes=tuple(range(len(shape))))
    g -= g.mean()
    std = g.std()
    if std > 0:
        g /= std
    return g


def lognormal_field(spec: SynthSpec) -> ScalarField:
    """``exp`` of :func:`gaussian_field`; strictly positive and seed-reproducible."""
    if spec.kind != "gaussian_exp":
        raise ToolkitError("BAD_PARAMS", f"lognormal_field needs kind gaussian_exp, got {spec.kind}")
    g = gaussian_field(spec)
    return ScalarField(np.exp(g), kind="volume_density", pixel_size=spec.pixel_size)


def gaussian_blob(spec: SynthSpec) -> ScalarField:
    """``amplitude * exp(-|x - center|**2 / (2 sigma**2))`` sampled at cell indices.

    The default center is cell ``n // 2`` on every axis.
    """
    if spec.kind != "blob":
        raise ToolkitError("BAD_PARAMS", f"gaussian_blob needs kind blob, got {spec.kind}")
    if not spec.sigma > 0 or not spec.amplitude >= 0:
        raise ToolkitError("BAD_PARAMS", "blob needs sigma > 0 and amplitude >= 0")
    center = spec.center if spec.center is not None else tuple(n // 2 for n in spec.shape)
    if len(center) != len(spec.shape):
        raise ToolkitError("BAD_PARAMS", f"center {center} does not match shape {spec.shape}")
    grids = np.meshgrid(*[np.arange(n, dtype=float) for n in spec.shape], indexing="ij", sparse=True)
    r2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    data = spec.amplitude * np.exp(-r2 / (2.0 * spec.sigma**2))
    return ScalarField(data, kind="volume_density", pixel_size=spec.pixel_size)


def synthesize(spec: SynthSpec) -> ScalarField:
    return lognormal_field(spec) if spec.kind == "gaussian_exp" else gaussian_blob(spec)


def parse_shape(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.replace("x", ",").split(",") if s)
    except ValueError as exc:
        raise ToolkitError("BAD_PARAMS", f"bad shape {text!r}") from exc


def parse_center(text: Optional[str]) -> Optional[Sequence[float]]:
    if text is None:
        return None
    try:
        return tuple(float(s) for s in text.split(","))
    except ValueError as exc:
        raise ToolkitError("BAD_PARAMS", f"bad center {text!r}") from exc
