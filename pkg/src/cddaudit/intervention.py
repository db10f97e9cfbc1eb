"""Scale-space interventions on a decomposition and cascade-exponent fits.

Two interventions are provided:

* :func:`perturb_scale` multiplies one channel by ``f`` and leaves the rest
  untouched, ``I_mod = I + (f - 1) * I_j``.
* :func:`tilt_cascade` reweights every channel by ``(r_i / r_ref)**s_c``,
  which rotates the density-scale relation about ``r_ref``.

:func:`measure_cascade` fits the exponent ``kappa`` of the per-channel
density scale ``n_i = sum(v**2) / sum(v)`` against ``r_i``. Since ``n_i`` is
homogeneous of degree one in the channel amplitude, a tilt by ``s_c`` moves
the fitted exponent by exactly ``s_c``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List

import numpy as np

from .cdd import ScaleDecomposition, decompose, reconstruct
from .errors import ToolkitError
from .field import ScalarField, total_mass


@dataclass(frozen=True)
class PerturbationSpec:
    channel: int
    factor: float


@dataclass(frozen=True)
class TiltSpec:
    index: float
    r_ref: float

    def __post_init__(self):
        if not (math.isfinite(self.r_ref) and self.r_ref > 0):
            raise ToolkitError("BAD_PARAMS", f"r_ref must be positive, got {self.r_ref}")
        if not math.isfinite(self.index):
            raise ToolkitError("BAD_PARAMS", f"tilt index must be finite, got {self.index}")


@dataclass(frozen=True)
class CascadeFit:
    radii: List[float]
    density: List[float]
    kappa: float
    intercept: float
    rms: float
    used: List[bool]

    def to_text(self) -> str:
        lines = ["# cascade fit", f"kappa = {self.kappa!r}", f"intercept = {self.intercept!r}",
                 f"rms = {self.rms!r}", "# radius, n, used"]
        lines += [f"{r!r}, {n!r}, {int(u)}" for r, n, u in zip(self.radii, self.density, self.used)]
        return "\n".join(lines) + "\n"


def _check_channel(decomp: ScaleDecomposition, j: int) -> None:
    if not isinstance(j, (int, np.integer)) or not 0 <= j < len(decomp):
        raise ToolkitError("BAD_CHANNEL", f"channel {j} outside 0..{len(decomp) - 1}")


def perturb_scale(decomp: ScaleDecomposition, spec: PerturbationSpec) -> ScalarField:
    """``reconstruct(decomp) + (f - 1) * component_j``.

    ``f = 0`` deletes the channel; ``f = 1`` returns the reconstruction
    bit-for-bit.
    """
    _check_channel(decomp, spec.channel)
    f = float(spec.factor)
    if not math.isfinite(f) or f < 0:
        raise ToolkitError("NEGATIVE_FACTOR", f"factor must be >= 0, got {spec.factor}")
    base = reconstruct(decomp)
    mod = base.data + (f - 1.0) * decomp.components[spec.channel].data
    return base.with_data(mod, kind="volume_density")


def tilt_weights(decomp: ScaleDecomposition, spec: TiltSpec) -> List[float]:
    """Channel weights ``(r_i / r_ref)**s_c``, residual last at ``r_N * ratio``."""
    radii = list(decomp.ladder.radii) + [decomp.ladder.residual_radius]
    return [(r / spec.r_ref) ** spec.index for r in radii]


def tilt_decomposition(decomp: ScaleDecomposition, spec: TiltSpec) -> ScaleDecomposition:
    """Decomposition whose channels and residual carry the tilt weights."""
    radii = decomp.ladder.radii
    if not radii[0] <= spec.r_ref <= radii[-1]:
        warnings.warn(
            f"r_ref = {spec.r_ref} lies outside the ladder range [{radii[0]}, {radii[-1]}]",
            stacklevel=2,
        )
    weights = tilt_weights(decomp, spec)
    comps = [c.with_data(c.data * w) for c, w in zip(decomp.components, weights)]
    residual = decomp.residual.with_data(decomp.residual.data * weights[-1])
    return ScaleDecomposition(comps, residual, decomp.ladder, decomp.config, decomp.source_hash)


def tilt_cascade(decomp: ScaleDecomposition, spec: TiltSpec) -> ScalarField:
    """Sum of the tilted channels and residual."""
    return reconstruct(tilt_decomposition(decomp, spec))


def channel_density(component) -> float:
    """Mass-weighted mean value ``sum(v**2) / sum(v)``; 0 for an empty channel."""
    data = component.data if isinstance(component, ScalarField) else np.asarray(component)
    mass = math.fsum(data.ravel().tolist())
    if mass <= 0:
        return 0.0
    return math.fsum((data * data).ravel().tolist()) / mass


def measure_cascade(decomp: ScaleDecomposition) -> CascadeFit:
    """Least-squares slope of ``log n_i`` against ``log r_i`` (residual excluded)."""
    radii = list(decomp.ladder.radii)
    density = [channel_density(c) for c in decomp.components]
    used = [n > 0 for n in density]
    if sum(used) < 2:
        raise ToolkitError("INSUFFICIENT_CHANNELS", f"{sum(used)} channel(s) with positive density")
    x = np.log([r for r, u in zip(radii, used) if u])
    y = np.log([n for n, u in zip(density, used) if u])
    xm = x.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - y.mean()) / np.dot(dx, dx))
    intercept = float(y.mean() - slope * xm)
    rms = float(np.sqrt(np.mean((y - (intercept + slope * x)) ** 2)))
    return CascadeFit(radii, density, slope, intercept, rms, used)


def mass_change(decomp: ScaleDecomposition, spec: PerturbationSpec) -> float:
    """Expected mass added by :func:`perturb_scale`, ``(f - 1) * m_j``."""
    _check_channel(decomp, spec.channel)
    return (spec.factor - 1.0) * total_mass(decomp.components[spec.channel])


def fit_field(field: ScalarField, ladder, cfg=None) -> CascadeFit:
    """Decompose ``field`` afresh and fit its cascade exponent."""
    return measure_cascade(decompose(field, ladder, cfg))
