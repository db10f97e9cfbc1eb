"""Scalar density fields, the NDF on-disk format, projection and spectra.

A field lives on disk as two files sharing a prefix::

    <prefix>.json   header: format_version, dtype, shape, field_kind,
                    optional pixel_size {value, unit}, optional note
    <prefix>.bin    raw little-endian float64, C order, no padding

All grid integrals are in pixel units: ``project`` sums along an axis and
never multiplies by ``pixel_size``, which is carried as metadata only.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ToolkitError

FORMAT_VERSION = 1
DTYPE_TAG = "f64le"
FIELD_KINDS = ("volume_density", "surface_density", "ratio", "component")
NONNEGATIVE_KINDS = ("volume_density", "surface_density", "component")
NEG_TOLERANCE = 1e-12

_LE_F64 = np.dtype("<f8")


@dataclass(frozen=True)
class PixelSize:
    value: float
    unit: str = "pixel"

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value > 0):
            raise ToolkitError("BAD_PARAMS", f"pixel_size must be positive, got {self.value}")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Immutable N-dimensional float64 grid with pixel metadata.

    ``data`` is stored as a read-only C-contiguous array; slowest axis first.
    Non-negative kinds are checked against ``-1e-12 * max(data)``.
    """

    data: np.ndarray
    kind: str = "volume_density"
    pixel_size: Optional[PixelSize] = None
    note: Optional[str] = None
    _digest: list = dc_field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if arr.ndim == 0 or any(n <= 0 for n in arr.shape):
            raise ToolkitError("BAD_PARAMS", f"invalid shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        if self.kind not in FIELD_KINDS:
            raise ToolkitError("BAD_PARAMS", f"unknown field_kind {self.kind!r}")
        if self.kind in NONNEGATIVE_KINDS:
            lo = float(arr.min())
            if lo < -negativity_floor(arr):
                raise ToolkitError(
                    "NEGATIVE_INPUT", f"{self.kind} field has minimum {lo:.3e}"
                )

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def with_data(self, data: np.ndarray, kind: Optional[str] = None) -> "ScalarField":
        """Same metadata, new values."""
        return ScalarField(data, kind=kind or self.kind, pixel_size=self.pixel_size, note=self.note)

    def digest(self) -> str:
        """SHA-256 hex digest of the little-endian binary payload."""
        if not self._digest:
            self._digest.append(hashlib.sha256(_payload(self.data)).hexdigest())
        return self._digest[0]

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.pixel_size == other.pixel_size
            and self.shape == other.shape
            and _payload(self.data) == _payload(other.data)
        )

    __hash__ = None


def negativity_floor(data: np.ndarray) -> float:
    """Allowed magnitude of negative numerical noise, ``1e-12 * max``."""
    return NEG_TOLERANCE * max(float(np.max(data)), 0.0)


def _payload(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype=_LE_F64).tobytes()


def _paths(path) -> Tuple[Path, Path]:
    p = Path(path)
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".bin")


def store_field(field: ScalarField, path) -> None:
    """Write ``<path>.json`` and ``<path>.bin``; overwrites existing files."""
    header_path, bin_path = _paths(path)
    header = {
        "format_version": FORMAT_VERSION,
        "dtype": DTYPE_TAG,
        "shape": [int(n) for n in field.shape],
        "field_kind": field.kind,
    }
    if field.pixel_size is not None:
        header["pixel_size"] = {"value": field.pixel_size.value, "unit": field.pixel_size.unit}
    if field.note is not None:
        header["note"] = field.note
    try:
        bin_path.write_bytes(_payload(field.data))
        header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ToolkitError("IO_FAILURE", f"cannot write {path}: {exc}") from exc


def read_header(path) -> dict:
    header_path, _ = _paths(path)
    if not header_path.is_file():
        raise ToolkitError("MISSING_FILE", str(header_path))
    try:
        header = json.loads(header_path.read_text())
    except (OSError, ValueError) as exc:
        raise ToolkitError("MALFORMED_HEADER", f"{header_path}: {exc}") from exc
    if not isinstance(header, dict):
        raise ToolkitError("MALFORMED_HEADER", f"{header_path}: not an object")
    if header.get("format_version") != FORMAT_VERSION:
        raise ToolkitError("MALFORMED_HEADER", f"unsupported format_version {header.get('format_version')!r}")
    if header.get("dtype") != DTYPE_TAG:
        raise ToolkitError("MALFORMED_HEADER", f"unsupported dtype {header.get('dtype')!r}")
    shape = header.get("shape")
    if (
        not isinstance(shape, list)
        or not shape
        or not all(isinstance(n, int) and not isinstance(n, bool) and n > 0 for n in shape)
    ):
        raise ToolkitError("MALFORMED_HEADER", f"bad shape {shape!r}")
    if header.get("field_kind", "volume_density") not in FIELD_KINDS:
        raise ToolkitError("MALFORMED_HEADER", f"bad field_kind {header.get('field_kind')!r}")
    return header


def load_field(path) -> ScalarField:
    """Read an NDF pair back into a field, bit-exactly."""
    header = read_header(path)
    _, bin_path = _paths(path)
    if not bin_path.is_file():
        raise ToolkitError("MISSING_FILE", str(bin_path))
    shape = tuple(header["shape"])
    expected = 8 * math.prod(shape)
    size = os.path.getsize(bin_path)
    if size != expected:
        raise ToolkitError("LENGTH_MISMATCH", f"{bin_path}: {size} bytes, expected {expected}")
    data = np.fromfile(bin_path, dtype=_LE_F64).astype(np.float64).reshape(shape)
    if not np.all(np.isfinite(data)):
        raise ToolkitError("MALFORMED_DATA", f"{bin_path}: non-finite values")
    ps = header.get("pixel_size")
    try:
        pixel_size = PixelSize(float(ps["value"]), str(ps.get("unit", "pixel"))) if ps else None
    except (TypeError, KeyError, ValueError) as exc:
        raise ToolkitError("MALFORMED_HEADER", f"bad pixel_size {ps!r}") from exc
    return ScalarField(
        data,
        kind=header.get("field_kind", "volume_density"),
        pixel_size=pixel_size,
        note=header.get("note"),
    )


def total_mass(field) -> float:
    """Sum of all values in pixel units.

    Uses the exactly rounded sum of ``math.fsum``, so the result does not
    depend on summation order, platform or SIMD width.
    """
    data = field.data if isinstance(field, ScalarField) else np.asarray(field, dtype=np.float64)
    return math.fsum(data.ravel().tolist())


def project(volume: ScalarField, axis: int = 0) -> ScalarField:
    """Line-of-sight integral of a 3D field: plain sum along ``axis``."""
    if volume.ndim != 3:
        raise ToolkitError("DIM_MISMATCH", f"project needs a 3D field, got {volume.ndim}D")
    if axis not in (0, 1, 2):
        raise ToolkitError("BAD_PARAMS", f"axis must be 0, 1 or 2, got {axis}")
    # math.fsum per column would be exact but slow; np.add.reduce over a fixed
    # axis is deterministic for a given layout.
    summed = np.add.reduce(volume.data, axis=axis)
    return ScalarField(summed, kind="surface_density", pixel_size=volume.pixel_size, note=volume.note)


def lift_uniform(map2d: ScalarField, depth: int, axis: int = 0) -> ScalarField:
    """Spread each pixel evenly over ``depth`` cells along ``axis``.

    Stand-in for a real 2D-to-3D reconstruction: conserves mass and is a
    right inverse of :func:`project` on the same axis.
    """
    if map2d.ndim != 2:
        raise ToolkitError("DIM_MISMATCH", f"lift_uniform needs a 2D field, got {map2d.ndim}D")
    if int(depth) != depth or depth < 1:
        raise ToolkitError("BAD_PARAMS", f"depth must be a positive integer, got {depth}")
    if axis not in (0, 1, 2):
        raise ToolkitError("BAD_PARAMS", f"axis must be 0, 1 or 2, got {axis}")
    column = map2d.data / depth
    vol = np.repeat(np.expand_dims(column, axis), int(depth), axis=axis)
    return ScalarField(vol, kind="volume_density", pixel_size=map2d.pixel_size, note=map2d.note)


def power_spectrum(field) -> Tuple[np.ndarray, np.ndarray]:
    """Isotropic power spectrum of the mean-subtracted field.

    Returns ``(k, power)`` for integer wavenumber bins ``k = 1 .. n//2``.
    A mode with radial wavenumber ``|k|`` falls in bin ``round(|k|)``;
    ``power`` is the mean of ``|FFT|^2 / n**d`` over the modes in the bin
    (zero for an empty bin).
    """
    data = field.data if isinstance(field, ScalarField) else np.asarray(field, dtype=np.float64)
    n = data.shape[0]
    if any(m != n for m in data.shape):
        raise ToolkitError("NON_CUBIC_GRID", f"power_spectrum needs equal extents, got {data.shape}")
    d = data.ndim
    amp = np.fft.fftn(data - data.mean())
    p = (amp.real**2 + amp.imag**2) / n**d
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    grids = np.meshgrid(*([freqs] * d), indexing="ij")
    kmag = np.sqrt(sum(g**2 for g in grids))
    bins = np.rint(kmag).astype(np.int64).ravel()
    kmax = n // 2
    sums = np.bincount(bins, weights=p.ravel(), minlength=kmax + 1)[: kmax + 1]
    counts = np.bincount(bins, minlength=kmax + 1)[: kmax + 1]
    k = np.arange(1, kmax + 1)
    power = np.divide(sums[1:], counts[1:], out=np.zeros(kmax), where=counts[1:] > 0)
    return k, power


def spectral_slope(k: Sequence[float], power: Sequence[float], kmin: int, kmax: int) -> float:
    """Least-squares slope of ``log power`` against ``log k`` over ``kmin..kmax``."""
    k = np.asarray(k, dtype=float)
    power = np.asarray(power, dtype=float)
    sel = (k >= kmin) & (k <= kmax) & (power > 0)
    if sel.sum() < 2:
        raise ToolkitError("BAD_PARAMS", "fewer than two usable bins for the slope fit")
    slope, _ = np.polyfit(np.log(k[sel]), np.log(power[sel]), 1)
    return float(slope)


def relabel(field: ScalarField, kind: str) -> ScalarField:
    return replace(field, kind=kind, _digest=[])
