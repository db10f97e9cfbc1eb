"""Audit harness: run a model on paired observables and score its response.

The model under test is any external process that maps a 2D observable to a
3D volume through NDF files. For every intervention the harness compares the
model's voxelwise response ratio ``R = pred_mod / pred_raw`` against the
physical expectation ``R* = 1 + (f - 1) * I_j / I_raw`` over the support of
the perturbed channel, and raises flags for the failure modes of interest:

NEGATIVE_RESPONSE  median(R) < 1 while median(R*) > 1
FROZEN             freezing score ``|R - 1|_1 / |R* - 1|_1`` below 0.1
DIVERGENT          freezing score above 10, or the response outside the
                   support (in excess of the physical one there) larger than
                   the response inside it
"""

from __future__ import annotations

import csv
import json
import shlex
import shutil
import subprocess
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cdd import ScaleDecomposition, reconstruct
from .errors import ToolkitError
from .field import ScalarField, load_field, project, store_field
from .fixtures import FIXTURE_KINDS, TruthStore
from .intervention import PerturbationSpec, perturb_scale

DEFAULT_TAU_FLOOR = 1e-6
DEFAULT_THETA_SUPPORT = 0.01
FREEZE_THRESHOLD = 0.1
DIVERGE_THRESHOLD = 10.0
HIST_BINS = 64
DEFAULT_F_LIST = (1.01, 1.1, 1.5, 3.0)


@dataclass(frozen=True)
class ModelEndpoint:
    """External model process.

    ``command`` is a token list containing ``{input}`` and ``{output}``
    exactly once each; both are replaced by NDF path prefixes.
    """

    command: Tuple[str, ...]
    expected_shape: Optional[Tuple[int, ...]] = None
    timeout: float = 600.0
    max_concurrent: int = 1
    truth_dir: Optional[str] = None

    def __post_init__(self):
        tokens = tuple(str(t) for t in self.command)
        object.__setattr__(self, "command", tokens)
        for ph in ("{input}", "{output}"):
            n = sum(t.count(ph) for t in tokens)
            if n != 1:
                raise ToolkitError("BAD_PARAMS", f"command template must contain {ph} exactly once (found {n})")
        if not self.timeout > 0:
            raise ToolkitError("BAD_PARAMS", f"timeout must be positive, got {self.timeout}")
        if int(self.max_concurrent) < 1:
            raise ToolkitError("BAD_PARAMS", "max_concurrent must be >= 1")
        if self.expected_shape is not None:
            object.__setattr__(self, "expected_shape", tuple(int(n) for n in self.expected_shape))

    @classmethod
    def from_string(cls, text: str, **kwargs) -> "ModelEndpoint":
        return cls(tuple(shlex.split(text)), **kwargs)


def builtin_fixture(kind: str, truth_dir, expected_shape=None, timeout: float = 600.0) -> ModelEndpoint:
    """Endpoint running this toolkit's own ``fixture`` subcommand."""
    if kind not in FIXTURE_KINDS:
        raise ToolkitError("BAD_PARAMS", f"unknown fixture kind {kind!r}")
    truth_dir = str(Path(truth_dir).resolve())
    cmd = (sys.executable, "-m", "cddaudit", "fixture", "--kind", kind, "--truth", truth_dir,
           "--input", "{input}", "--output", "{output}")
    return ModelEndpoint(cmd, expected_shape=expected_shape, timeout=timeout, truth_dir=truth_dir)


def run_model(endpoint: ModelEndpoint, observable: ScalarField, workdir) -> ScalarField:
    """Execute the endpoint on ``observable`` and load the volume it writes.

    Each call gets its own scratch directory under ``workdir``; it is removed
    after a successful load and kept for inspection on failure.
    """
    if observable.ndim != 2 or observable.kind != "surface_density":
        raise ToolkitError("BAD_PARAMS", "observable must be a 2D surface_density field")
    Path(workdir).mkdir(parents=True, exist_ok=True)
    call_dir = Path(tempfile.mkdtemp(prefix="call_", dir=workdir))
    inp, out = call_dir / "input", call_dir / "output"
    store_field(observable, inp)
    cmd = [t.replace("{input}", str(inp)).replace("{output}", str(out)) for t in endpoint.command]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=endpoint.timeout)
    except subprocess.TimeoutExpired as exc:
        raise ToolkitError("MODEL_TIMEOUT", f"no result after {endpoint.timeout} s") from exc
    except OSError as exc:
        raise ToolkitError("MODEL_FAILURE", f"cannot start model: {exc}") from exc
    if proc.returncode != 0:
        tail = (proc.stderr or "").strip().splitlines()[-1:] or [""]
        raise ToolkitError("MODEL_FAILURE", f"exit code {proc.returncode}: {tail[0]}")
    try:
        pred = load_field(out)
    except ToolkitError as exc:
        raise ToolkitError("BAD_OUTPUT", exc.message or exc.code) from exc
    if pred.ndim != 3:
        raise ToolkitError("BAD_OUTPUT", f"model wrote a {pred.ndim}D field, expected 3D")
    if endpoint.expected_shape is not None and pred.shape != endpoint.expected_shape:
        raise ToolkitError("BAD_OUTPUT", f"model wrote shape {pred.shape}, expected {endpoint.expected_shape}")
    if float(pred.data.min()) < -1e-12 * max(float(pred.data.max()), 0.0):
        raise ToolkitError("BAD_OUTPUT", "model output is negative")
    if pred.kind != "volume_density":
        pred = pred.with_data(pred.data, kind="volume_density")
    shutil.rmtree(call_dir, ignore_errors=True)
    return pred


def _check_shapes(*fields):
    shape = fields[0].shape
    for f in fields[1:]:
        if f.shape != shape:
            raise ToolkitError("SHAPE_MISMATCH", f"{f.shape} != {shape}")


def _floor_mask(values: np.ndarray, tau_floor: float) -> np.ndarray:
    return (values >= tau_floor * float(values.max())) & (values > 0)


def expected_ratio(i_raw: ScalarField, component: ScalarField, f: float,
                   tau_floor: float = DEFAULT_TAU_FLOOR) -> Tuple[ScalarField, np.ndarray]:
    """Physical ratio ``1 + (f - 1) * I_j / I_raw`` and the validity mask.

    Cells where ``I_raw`` is below ``tau_floor * max(I_raw)`` are invalid and
    hold 1.0.
    """
    _check_shapes(i_raw, component)
    valid = _floor_mask(i_raw.data, tau_floor)
    ratio = np.ones(i_raw.shape)
    ratio[valid] = 1.0 + (f - 1.0) * component.data[valid] / i_raw.data[valid]
    return ScalarField(ratio, kind="ratio", pixel_size=i_raw.pixel_size), valid


def response_ratio(pred_mod: ScalarField, pred_raw: ScalarField,
                   tau_floor: float = DEFAULT_TAU_FLOOR) -> Tuple[ScalarField, np.ndarray, float]:
    """``pred_mod / pred_raw`` on cells above the floor.

    Returns the ratio field (1.0 on masked cells), the validity mask and the
    masked fraction.
    """
    _check_shapes(pred_mod, pred_raw)
    valid = _floor_mask(pred_raw.data, tau_floor)
    if not valid.any():
        raise ToolkitError("ALL_MASKED", "no cell of the raw prediction is above the floor")
    ratio = np.ones(pred_raw.shape)
    ratio[valid] = pred_mod.data[valid] / pred_raw.data[valid]
    masked = 1.0 - float(valid.mean())
    return ScalarField(ratio, kind="ratio", pixel_size=pred_raw.pixel_size), valid, masked


@dataclass
class SupportMask:
    mask: np.ndarray
    valid: np.ndarray
    theta_support: float = DEFAULT_THETA_SUPPORT
    tau_floor: float = DEFAULT_TAU_FLOOR

    @property
    def size(self) -> int:
        return int(self.mask.sum())


def support_mask(component: ScalarField, valid: np.ndarray,
                 theta_support: float = DEFAULT_THETA_SUPPORT,
                 tau_floor: float = DEFAULT_TAU_FLOOR) -> SupportMask:
    """Cells where the perturbed channel exceeds ``theta_support`` of its max."""
    c = component.data
    footprint = (c >= theta_support * float(c.max())) & (c > 0)
    return SupportMask(footprint & valid, valid.copy(), theta_support, tau_floor)


@dataclass
class ResponseReport:
    ratio: ScalarField
    expected: ScalarField
    support: SupportMask
    masked_fraction: float
    monotonicity: float
    freezing: float
    flags: Tuple[str, ...]
    median_response: float
    median_expected: float
    inside_l1: float
    outside_excess_l1: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray

    def summary(self) -> dict:
        return {
            "median_response": self.median_response,
            "median_expected": self.median_expected,
            "monotonicity": self.monotonicity,
            "freezing": self.freezing,
            "flags": list(self.flags),
            "masked_fraction": self.masked_fraction,
            "support_size": self.support.size,
            "inside_l1": self.inside_l1,
            "outside_excess_l1": self.outside_excess_l1,
        }


def classify_response(ratio: ScalarField, expected: ScalarField, support: SupportMask, f: float,
                      masked_fraction: float = 0.0,
                      freeze_threshold: float = FREEZE_THRESHOLD,
                      diverge_threshold: float = DIVERGE_THRESHOLD) -> ResponseReport:
    """Score the model response ``ratio`` against the physical ``expected`` ratio."""
    _check_shapes(ratio, expected)
    if support.mask.shape != ratio.shape:
        raise ToolkitError("SHAPE_MISMATCH", f"support {support.mask.shape} != {ratio.shape}")
    if f == 1:
        raise ToolkitError("BAD_PARAMS", "classification needs f != 1")
    sel = support.mask
    if not sel.any():
        raise ToolkitError("EMPTY_SUPPORT", "perturbed channel has no support above the floor")
    dr = ratio.data[sel] - 1.0
    de = expected.data[sel] - 1.0
    monotonicity = float(np.mean(np.sign(dr) == np.sign(de)))
    inside = float(np.abs(dr).sum())
    expected_l1 = float(np.abs(de).sum())
    freezing = inside / expected_l1 if expected_l1 > 0 else float("inf")

    outside = support.valid & ~sel
    out_model = float(np.abs(ratio.data[outside] - 1.0).sum())
    out_phys = float(np.abs(expected.data[outside] - 1.0).sum())
    excess = out_model - out_phys

    med_r = float(np.median(ratio.data[sel]))
    med_e = float(np.median(expected.data[sel]))
    flags = []
    if med_r < 1.0 and med_e > 1.0:
        flags.append("NEGATIVE_RESPONSE")
    if freezing < freeze_threshold:
        flags.append("FROZEN")
    if freezing > diverge_threshold or excess > inside:
        flags.append("DIVERGENT")

    vals = ratio.data[sel]
    counts, edges = np.histogram(vals, bins=HIST_BINS, range=(float(vals.min()), float(vals.max())))
    return ResponseReport(
        ratio=ratio,
        expected=expected,
        support=support,
        masked_fraction=masked_fraction,
        monotonicity=monotonicity,
        freezing=freezing,
        flags=tuple(flags),
        median_response=med_r - 1.0,
        median_expected=med_e - 1.0,
        inside_l1=inside,
        outside_excess_l1=excess,
        hist_edges=edges,
        hist_counts=counts,
    )


def audit_pair(pred_raw: ScalarField, pred_mod: ScalarField, i_raw: ScalarField, component: ScalarField,
               f: float, tau_floor: float = DEFAULT_TAU_FLOOR,
               theta_support: float = DEFAULT_THETA_SUPPORT) -> ResponseReport:
    """Ratio, expectation, support and classification for one intervention."""
    ratio, valid_pred, masked = response_ratio(pred_mod, pred_raw, tau_floor)
    expected, valid_phys = expected_ratio(i_raw, component, f, tau_floor)
    support = support_mask(component, valid_pred & valid_phys, theta_support, tau_floor)
    return classify_response(ratio, expected, support, f, masked_fraction=masked)


@dataclass
class ScanPoint:
    index: int
    channel: int
    radius: float
    factor: float
    status: str = "ok"
    error: Optional[str] = None
    summary: dict = dc_field(default_factory=dict)
    report: Optional[ResponseReport] = dc_field(default=None, repr=False)

    @property
    def median_response(self) -> float:
        return self.summary.get("median_response", float("nan"))


@dataclass
class ScanReport:
    axis: str
    points: List[ScanPoint]
    flip_count: int
    raw_digest: str
    projection_axis: int = 0

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "projection_axis": self.projection_axis,
            "raw_digest": self.raw_digest,
            "flip_count": self.flip_count,
            "points": [
                {k: v for k, v in asdict(p).items() if k != "report"} for p in self.points
            ],
        }


def polarity_flips(medians: Sequence[float]) -> int:
    """Sign changes between consecutive non-zero, finite medians."""
    signs = [np.sign(m) for m in medians if np.isfinite(m) and m != 0]
    return int(sum(1 for a, b in zip(signs, signs[1:]) if a != b))


@dataclass
class _Case:
    point: ScanPoint
    volume: ScalarField
    observable: ScalarField


def _plan(decomp: ScaleDecomposition, pairs: Sequence[Tuple[int, float]], axis: int) -> List[_Case]:
    cases = []
    for idx, (j, f) in enumerate(pairs, start=1):
        vol = perturb_scale(decomp, PerturbationSpec(j, f))
        pt = ScanPoint(index=idx, channel=j, radius=decomp.radii[j], factor=float(f))
        cases.append(_Case(pt, vol, project(vol, axis)))
    return cases


def stage_truth(truth_dir, raw_volume: ScalarField, raw_obs: ScalarField, cases: Sequence[_Case]) -> None:
    """Register the raw and every perturbed volume for the built-in fixtures."""
    store = TruthStore(truth_dir)
    store.register(raw_obs, raw_volume, 0)
    for case in cases:
        store.register(case.observable, case.volume, case.point.index)
    store.save()


def run_scan(endpoint: ModelEndpoint, decomp: ScaleDecomposition, pairs: Sequence[Tuple[int, float]],
             axis_tag: str, workdir=None, projection_axis: int = 0,
             tau_floor: float = DEFAULT_TAU_FLOOR, theta_support: float = DEFAULT_THETA_SUPPORT,
             jobs: Optional[int] = None) -> ScanReport:
    """Run the model on the raw observable once, then on every scan point."""
    for _, f in pairs:
        if not f > 0 or f == 1:
            raise ToolkitError("BAD_PARAMS", f"scan factors must be > 0 and != 1, got {f}")
    i_raw = reconstruct(decomp)
    if i_raw.ndim != 3:
        raise ToolkitError("DIM_MISMATCH", "audits need a 3D baseline decomposition")
    raw_obs = project(i_raw, projection_axis)
    cases = _plan(decomp, pairs, projection_axis)
    own_tmp = None
    if workdir is None:
        own_tmp = tempfile.TemporaryDirectory(prefix="cddaudit_")
        workdir = own_tmp.name
    try:
        if endpoint.truth_dir is not None:
            stage_truth(endpoint.truth_dir, i_raw, raw_obs, cases)
        pred_raw = run_model(endpoint, raw_obs, workdir)

        def evaluate(case: _Case) -> ScanPoint:
            pt = case.point
            try:
                pred_mod = run_model(endpoint, case.observable, workdir)
                report = audit_pair(pred_raw, pred_mod, i_raw, decomp.components[pt.channel],
                                    pt.factor, tau_floor, theta_support)
            except ToolkitError as exc:
                pt.status, pt.error = "failed", exc.code
                return pt
            pt.summary, pt.report = report.summary(), report
            return pt

        workers = max(1, int(jobs or endpoint.max_concurrent))
        if workers == 1:
            points = [evaluate(c) for c in cases]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                points = list(pool.map(evaluate, cases))
    finally:
        if own_tmp is not None:
            own_tmp.cleanup()
    flips = polarity_flips([p.median_response for p in points if p.status == "ok"])
    return ScanReport(axis_tag, points, flips, raw_obs.digest(), projection_axis)


def amplitude_scan(endpoint: ModelEndpoint, decomp: ScaleDecomposition, channel: int,
                   f_list: Sequence[float] = DEFAULT_F_LIST, **kwargs) -> ScanReport:
    """One channel, a sequence of magnification factors."""
    if not f_list:
        raise ToolkitError("BAD_PARAMS", "f_list is empty")
    if not 0 <= channel < len(decomp):
        raise ToolkitError("BAD_CHANNEL", f"channel {channel} outside 0..{len(decomp) - 1}")
    return run_scan(endpoint, decomp, [(channel, f) for f in f_list], "amplitude", **kwargs)


def frequency_scan(endpoint: ModelEndpoint, decomp: ScaleDecomposition, f: float = 1.5,
                   **kwargs) -> ScanReport:
    """Every channel in turn, one magnification factor."""
    if len(decomp) < 2:
        raise ToolkitError("INSUFFICIENT_CHANNELS", "frequency scans need at least two channels")
    return run_scan(endpoint, decomp, [(j, f) for j in range(len(decomp))], "frequency", **kwargs)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, list):
        return "|".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_scan_report(report: ScanReport, directory) -> List[Path]:
    """``report.json``, ``curve.csv`` and one ``hist_<index>.csv`` per scored point."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = [d / "report.json", d / "curve.csv"]
    (d / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    cols = ["index", "channel", "radius", "factor", "status", "error", "median_response",
            "median_expected", "monotonicity", "freezing", "flags", "masked_fraction", "support_size"]
    with open(d / "curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for p in report.points:
            s = p.summary
            row = [p.index, p.channel, p.radius, p.factor, p.status, p.error or ""]
            row += [_cell(s.get(k)) for k in cols[6:]]
            w.writerow([_cell(v) for v in row])
    for p in report.points:
        if p.report is None:
            continue
        path = d / f"hist_{p.index}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            e, c = p.report.hist_edges, p.report.hist_counts
            for lo, hi, n in zip(e[:-1], e[1:], c):
                w.writerow([repr(float(lo)), repr(float(hi)), int(n)])
        written.append(path)
    return written
