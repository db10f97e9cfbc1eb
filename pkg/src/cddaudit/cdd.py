"""Constrained diffusion decomposition of non-negative fields.

The input is evolved under the heat equation with unit diffusivity and
zero-flux boundaries. At every explicit timestep the increment is restricted
to be non-positive and clipped so that no cell falls below zero::

    W <- W + min(0, max(dt * lap(W), -W))

The working field is snapshotted at diffusion times ``t_k = r_k**2 / 2``; the
material removed between consecutive snapshots is channel ``k`` and whatever
survives the last snapshot is the residual. Because the channels telescope,
``sum(components) + residual`` reproduces the input up to rounding, every
channel is non-negative, and channel masses add up to the input mass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ._kernels import as_volume, constrained_steps
from .errors import ToolkitError
from .field import ScalarField, load_field, negativity_floor, store_field, total_mass

SCALE_TIME_RULE = "t=r^2/2"
BOUNDARY = "reflecting"


@dataclass(frozen=True)
class ScaleLadder:
    """Strictly increasing channel radii in pixels.

    ``ratio`` is the ladder's growth factor; it fixes the effective radius
    ``r_N * ratio`` given to the residual when tilting.
    """

    radii: tuple
    ratio: float = 2.0

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        object.__setattr__(self, "radii", radii)
        if not radii:
            raise ToolkitError("BAD_PARAMS", "ladder needs at least one radius")
        if not all(math.isfinite(r) for r in radii):
            raise ToolkitError("BAD_PARAMS", "ladder radii must be finite")
        if radii[0] < 1.0:
            raise ToolkitError("BAD_PARAMS", f"smallest radius {radii[0]} is below 1 pixel")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ToolkitError("BAD_PARAMS", "ladder radii must be strictly increasing")
        if not (math.isfinite(self.ratio) and self.ratio > 1.0):
            raise ToolkitError("BAD_PARAMS", f"ladder ratio must exceed 1, got {self.ratio}")

    def __len__(self):
        return len(self.radii)

    @property
    def residual_radius(self) -> float:
        return self.radii[-1] * self.ratio

    @classmethod
    def from_radii(cls, radii: Sequence[float]) -> "ScaleLadder":
        radii = [float(r) for r in radii]
        ratio = radii[-1] / radii[-2] if len(radii) > 1 else 2.0
        return cls(tuple(radii), ratio if ratio > 1 else 2.0)


@dataclass(frozen=True)
class DiffusionConfig:
    safety: float = 0.5
    boundary: str = BOUNDARY
    scale_time_rule: str = SCALE_TIME_RULE

    def __post_init__(self):
        if not (0.0 < self.safety <= 1.0):
            raise ToolkitError("BAD_PARAMS", f"safety factor must lie in (0, 1], got {self.safety}")
        if self.boundary != BOUNDARY:
            raise ToolkitError("BAD_PARAMS", f"unsupported boundary {self.boundary!r}")
        if self.scale_time_rule != SCALE_TIME_RULE:
            raise ToolkitError("BAD_PARAMS", f"unsupported scale-time rule {self.scale_time_rule!r}")

    def timestep(self, ndim: int) -> float:
        """Explicit step ``safety * h**2 / (2 d)`` with ``h = 1``."""
        return self.safety / (2.0 * ndim)

    def to_dict(self) -> dict:
        return {"safety": self.safety, "boundary": self.boundary, "scale_time_rule": self.scale_time_rule}


@dataclass(frozen=True, eq=False)
class ScaleDecomposition:
    components: List[ScalarField]
    residual: ScalarField
    ladder: ScaleLadder
    config: DiffusionConfig = dc_field(default_factory=DiffusionConfig)
    source_hash: Optional[str] = None

    def __post_init__(self):
        if len(self.components) != len(self.ladder):
            raise ToolkitError(
                "SHAPE_MISMATCH",
                f"{len(self.components)} components for {len(self.ladder)} radii",
            )
        shape = self.residual.shape
        for comp in self.components:
            if comp.shape != shape:
                raise ToolkitError("SHAPE_MISMATCH", f"component shape {comp.shape} != {shape}")

    @property
    def source_shape(self):
        return self.residual.shape

    @property
    def radii(self):
        return self.ladder.radii

    def __len__(self):
        return len(self.components)


def make_scales(r_min: float = 1.0, ratio: float = 2.0, count: int = 6) -> ScaleLadder:
    """Geometric ladder ``r_k = r_min * ratio**(k-1)``, ``k = 1..count``."""
    if not (r_min >= 1.0) or not (ratio > 1.0) or int(count) != count or count < 1:
        raise ToolkitError("BAD_PARAMS", f"need r_min >= 1, ratio > 1, count >= 1; got {r_min}, {ratio}, {count}")
    return ScaleLadder(tuple(r_min * ratio**k for k in range(int(count))), float(ratio))


def parse_scales(text: str) -> ScaleLadder:
    """Parse the ``rmin:ratio:count`` ladder syntax."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ToolkitError("BAD_PARAMS", f"scale ladder must be rmin:ratio:count, got {text!r}")
    try:
        return make_scales(float(parts[0]), float(parts[1]), int(parts[2]))
    except ValueError as exc:
        raise ToolkitError("BAD_PARAMS", f"bad scale ladder {text!r}") from exc


def diffusion_time(radius: float) -> float:
    return radius * radius / 2.0


def step_plan(t_from: float, t_to: float, dt: float):
    """Number of full steps and length of the final shortened step."""
    span = t_to - t_from
    nfull = int(math.floor(span / dt))
    last = span - nfull * dt
    if last <= 1e-9 * dt:
        last = 0.0
    return nfull, last


def decompose(
    field: ScalarField,
    ladder: ScaleLadder,
    cfg: Optional[DiffusionConfig] = None,
) -> ScaleDecomposition:
    """Split ``field`` into one non-negative channel per ladder radius plus a residual."""
    cfg = cfg or DiffusionConfig()
    src = field.data
    if not np.all(np.isfinite(src)):
        raise ToolkitError("MALFORMED_DATA", "field contains non-finite values")
    if src.size and float(src.min()) < -negativity_floor(src):
        raise ToolkitError("NEGATIVE_INPUT", f"minimum value {float(src.min()):.3e}")
    limit = min(src.shape) / 2.0
    if ladder.radii[-1] >= limit:
        raise ToolkitError(
            "SCALE_TOO_LARGE",
            f"largest radius {ladder.radii[-1]} must be below half the smallest extent ({limit})",
        )

    dt = cfg.timestep(src.ndim)
    w = as_volume(src).copy()
    buf = np.empty_like(w)
    components = []
    t = 0.0
    for r in ladder.radii:
        t_target = diffusion_time(r)
        nfull, last = step_plan(t, t_target, dt)
        before = w.copy()
        w_new = constrained_steps(w, buf, dt, nfull, last)
        if w_new is buf:
            w, buf = buf, w
        t = t_target
        components.append(
            ScalarField((before - w).reshape(src.shape), kind="component", pixel_size=field.pixel_size)
        )
    residual = ScalarField(w.reshape(src.shape), kind="component", pixel_size=field.pixel_size)
    return ScaleDecomposition(components, residual, ladder, cfg, source_hash=field.digest())


def reconstruct(decomp: ScaleDecomposition) -> ScalarField:
    """Sum of all channels and the residual, accumulated in channel order."""
    shape = decomp.residual.shape
    acc = np.zeros(shape)
    for comp in decomp.components:
        if comp.shape != shape:
            raise ToolkitError("SHAPE_MISMATCH", f"component shape {comp.shape} != {shape}")
        acc += comp.data
    acc += decomp.residual.data
    return ScalarField(acc, kind="volume_density", pixel_size=decomp.residual.pixel_size)


def channel_mass(decomp: ScaleDecomposition) -> List[float]:
    """Mass of every channel, then of the residual."""
    return [total_mass(c) for c in decomp.components] + [total_mass(decomp.residual)]


def save_decomposition(decomp: ScaleDecomposition, directory) -> None:
    """Write ``ladder.json``, ``component_<k>``, ``residual`` and ``source_hash``."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ToolkitError("IO_FAILURE", f"cannot create {d}: {exc}") from exc
    meta = {
        "radii": list(decomp.ladder.radii),
        "ratio": decomp.ladder.ratio,
        "config": decomp.config.to_dict(),
        "source_shape": list(decomp.source_shape),
        "count": len(decomp),
    }
    for k, comp in enumerate(decomp.components):
        store_field(comp, d / f"component_{k}")
    store_field(decomp.residual, d / "residual")
    try:
        (d / "ladder.json").write_text(json.dumps(meta, indent=2) + "\n")
        (d / "source_hash").write_text((decomp.source_hash or "") + "\n")
    except OSError as exc:
        raise ToolkitError("IO_FAILURE", f"cannot write {d}: {exc}") from exc


def load_decomposition(directory) -> ScaleDecomposition:
    d = Path(directory)
    meta_path = d / "ladder.json"
    if not meta_path.is_file():
        raise ToolkitError("MISSING_FILE", str(meta_path))
    try:
        meta = json.loads(meta_path.read_text())
        ladder = ScaleLadder(tuple(meta["radii"]), float(meta["ratio"]))
        cfg = DiffusionConfig(**meta.get("config", {}))
    except (ValueError, KeyError, TypeError) as exc:
        raise ToolkitError("MALFORMED_HEADER", f"{meta_path}: {exc}") from exc
    components = [load_field(d / f"component_{k}") for k in range(len(ladder))]
    residual = load_field(d / "residual")
    hash_path = d / "source_hash"
    source_hash = hash_path.read_text().strip() or None if hash_path.is_file() else None
    return ScaleDecomposition(components, residual, ladder, cfg, source_hash=source_hash)
