"""Command-line entry point: ``cddaudit <subcommand> ...``.

Exit codes: 0 on success, 2 on a usage error, 1 on a runtime error (one line
on stderr carrying the error tag). Every subcommand except ``fixture`` also
writes ``<out>.manifest.json`` describing the run.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .errors import ToolkitError


def _flist(text: str):
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _ladder(text: str):
    from .cdd import parse_scales

    try:
        return parse_scales(text)
    except ToolkitError as exc:
        raise argparse.ArgumentTypeError(exc.message)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="cddaudit", description=__doc__.splitlines()[0], formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a seeded synthetic field", formatter_class=fmt)
    s.add_argument("--kind", choices=["lognormal", "blob"], default="lognormal")
    s.add_argument("--shape", default="64,64,64", help="comma-separated equal extents")
    s.add_argument("--beta", type=float, default=-3.0, help="spectral slope of the Gaussian field")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sigma", type=float, default=4.0, help="blob standard deviation (pixels)")
    s.add_argument("--center", default=None, help="blob center, comma-separated (default n//2)")
    s.add_argument("--amplitude", type=float, default=1.0, help="blob peak value")
    s.add_argument("--pixel-size", type=float, default=None)
    s.add_argument("--pixel-unit", default="pc")
    s.add_argument("--out", required=True)

    s = sub.add_parser("decompose", help="constrained diffusion decomposition", formatter_class=fmt)
    s.add_argument("--in", dest="inp", required=True, help="NDF prefix")
    s.add_argument("--scales", type=_ladder, default="1:2:6", help="ladder rmin:ratio:count")
    s.add_argument("--safety", type=float, default=0.5, help="fraction of the explicit stability limit")
    s.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("perturb", help="magnify one channel: I + (f-1) I_j", formatter_class=fmt)
    s.add_argument("--in", dest="inp", required=True, help="decomposition directory")
    s.add_argument("--channel", type=int, default=0, help="0-based channel index")
    s.add_argument("--f", type=float, default=1.5, help="magnification factor")
    s.add_argument("--out", required=True)

    s = sub.add_parser("tilt", help="reweight channels by (r/r_ref)^sc", formatter_class=fmt)
    s.add_argument("--in", dest="inp", required=True, help="decomposition directory")
    s.add_argument("--sc", type=float, required=True, help="tilt index")
    s.add_argument("--rref", type=float, required=True, help="pivot radius (pixels)")
    s.add_argument("--out", required=True, help="NDF prefix for the tilted field")
    s.add_argument("--decomp-out", default=None, help="also write the reweighted decomposition here")

    s = sub.add_parser("project", help="sum a 3D field along one axis", formatter_class=fmt)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--axis", type=int, choices=[0, 1, 2], default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("lift", help="spread a 2D map uniformly over depth", formatter_class=fmt)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--depth", type=int, required=True)
    s.add_argument("--axis", type=int, choices=[0, 1, 2], default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("fit", help="fit the cascade exponent", formatter_class=fmt)
    s.add_argument("--in", dest="inp", required=True, help="decomposition directory or NDF prefix")
    s.add_argument("--scales", type=_ladder, default="1:2:6", help="ladder used when --in is a field")
    s.add_argument("--out", default=None, help="write the text report here as well")

    s = sub.add_parser("audit", help="scan a model's response to interventions", formatter_class=fmt)
    s.add_argument("--in", dest="inp", required=True, help="baseline decomposition directory (3D)")
    s.add_argument("--endpoint", default="oracle",
                   help="built-in fixture (oracle, frozen, signflip) or a command template "
                        "containing {input} and {output}")
    s.add_argument("--mode", choices=["amplitude", "frequency"], default="amplitude")
    s.add_argument("--channel", type=int, default=0, help="channel for amplitude scans")
    s.add_argument("--f", type=float, default=1.5, help="factor for frequency scans")
    s.add_argument("--f-list", type=_flist, default=[1.01, 1.1, 1.5, 3.0], help="factors for amplitude scans")
    s.add_argument("--axis", type=int, choices=[0, 1, 2], default=0, help="projection axis")
    s.add_argument("--tau-floor", type=float, default=1e-6)
    s.add_argument("--theta-support", type=float, default=0.01)
    s.add_argument("--jobs", type=int, default=1, help="concurrent model invocations")
    s.add_argument("--timeout", type=float, default=600.0, help="seconds per model call")
    s.add_argument("--out", required=True, help="report directory")

    s = sub.add_parser("fixture", help="built-in model process (file protocol)", formatter_class=fmt)
    s.add_argument("--kind", choices=["oracle", "frozen", "signflip"], required=True)
    s.add_argument("--truth", required=True, help="truth directory")
    s.add_argument("--input", required=True, help="NDF prefix of the 2D observable")
    s.add_argument("--output", required=True, help="NDF prefix for the 3D prediction")
    return p


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _input_digest(prefix: str) -> str:
    p = Path(prefix)
    if p.is_dir():
        h = p / "source_hash"
        return h.read_text().strip() if h.is_file() else ""
    b = p.with_name(p.name + ".bin")
    return _file_digest(b) if b.is_file() else ""


def _write_manifest(args, params: dict, outputs) -> None:
    out = Path(args.out)
    manifest = {
        "subcommand": args.command,
        "parameters": params,
        "inputs": {args.inp: _input_digest(args.inp)} if getattr(args, "inp", None) else {},
        "outputs": [str(o) for o in outputs],
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    for o in outputs:
        if not Path(o).exists():
            raise ToolkitError("IO_FAILURE", f"expected output {o} is missing")
    path = out.with_name(out.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _ndf_outputs(prefix) -> list:
    p = Path(prefix)
    return [p.with_name(p.name + ".json"), p.with_name(p.name + ".bin")]


def _params(args) -> dict:
    out = {}
    for k, v in vars(args).items():
        if k in ("command", "handler"):
            continue
        if hasattr(v, "radii"):
            v = {"radii": list(v.radii), "ratio": v.ratio}
        out[k] = v
    return out


def cmd_synth(args):
    from .field import PixelSize, store_field
    from .synth import SynthSpec, parse_center, parse_shape, synthesize

    pixel = PixelSize(args.pixel_size, args.pixel_unit) if args.pixel_size is not None else None
    spec = SynthSpec(
        shape=parse_shape(args.shape),
        beta=args.beta,
        seed=args.seed,
        kind="gaussian_exp" if args.kind == "lognormal" else "blob",
        sigma=args.sigma,
        center=parse_center(args.center),
        amplitude=args.amplitude,
        pixel_size=pixel,
    )
    store_field(synthesize(spec), args.out)
    return _ndf_outputs(args.out)


def cmd_decompose(args):
    from .cdd import DiffusionConfig, decompose, save_decomposition
    from .field import load_field

    decomp = decompose(load_field(args.inp), args.scales, DiffusionConfig(safety=args.safety))
    save_decomposition(decomp, args.out)
    return [Path(args.out)]


def cmd_perturb(args):
    from .cdd import load_decomposition
    from .field import store_field
    from .intervention import PerturbationSpec, perturb_scale

    store_field(perturb_scale(load_decomposition(args.inp), PerturbationSpec(args.channel, args.f)), args.out)
    return _ndf_outputs(args.out)


def cmd_tilt(args):
    from .cdd import load_decomposition, reconstruct, save_decomposition
    from .field import store_field
    from .intervention import TiltSpec, tilt_decomposition

    tilted = tilt_decomposition(load_decomposition(args.inp), TiltSpec(args.sc, args.rref))
    store_field(reconstruct(tilted), args.out)
    outputs = _ndf_outputs(args.out)
    if args.decomp_out:
        save_decomposition(tilted, args.decomp_out)
        outputs.append(Path(args.decomp_out))
    return outputs


def cmd_project(args):
    from .field import load_field, project, store_field

    store_field(project(load_field(args.inp), args.axis), args.out)
    return _ndf_outputs(args.out)


def cmd_lift(args):
    from .field import lift_uniform, load_field, store_field

    store_field(lift_uniform(load_field(args.inp), args.depth, args.axis), args.out)
    return _ndf_outputs(args.out)


def cmd_fit(args):
    from .cdd import decompose, load_decomposition
    from .field import load_field
    from .intervention import measure_cascade

    if Path(args.inp).is_dir():
        decomp = load_decomposition(args.inp)
    else:
        decomp = decompose(load_field(args.inp), args.scales)
    text = measure_cascade(decomp).to_text()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
        return [Path(args.out)]
    return None


def cmd_audit(args):
    from .audit import ModelEndpoint, amplitude_scan, builtin_fixture, frequency_scan, write_scan_report
    from .cdd import load_decomposition

    decomp = load_decomposition(args.inp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.endpoint in ("oracle", "frozen", "signflip"):
        endpoint = builtin_fixture(args.endpoint, out / "truth", expected_shape=decomp.source_shape,
                                   timeout=args.timeout)
    else:
        endpoint = ModelEndpoint.from_string(args.endpoint, expected_shape=decomp.source_shape,
                                             timeout=args.timeout, max_concurrent=max(1, args.jobs))
    common = dict(workdir=out / "work", projection_axis=args.axis, tau_floor=args.tau_floor,
                  theta_support=args.theta_support, jobs=args.jobs)
    if args.mode == "amplitude":
        report = amplitude_scan(endpoint, decomp, args.channel, args.f_list, **common)
    else:
        report = frequency_scan(endpoint, decomp, args.f, **common)
    written = write_scan_report(report, out)
    sys.stdout.write(f"flip_count = {report.flip_count}\n")
    for pt in report.points:
        s = pt.summary
        flags = "|".join(s.get("flags", [])) if pt.status == "ok" else pt.error
        sys.stdout.write(
            f"point {pt.index}: channel={pt.channel} f={pt.factor!r} status={pt.status} "
            f"median(R-1)={s.get('median_response', float('nan')):.6g} "
            f"M={s.get('monotonicity', float('nan')):.6g} Phi={s.get('freezing', float('nan')):.6g} "
            f"flags={flags or '-'}\n"
        )
    return written


def cmd_fixture(args):
    from .fixtures import run_fixture

    run_fixture(args.kind, args.truth, args.input, args.output)
    return None


HANDLERS = {
    "synth": cmd_synth,
    "decompose": cmd_decompose,
    "perturb": cmd_perturb,
    "tilt": cmd_tilt,
    "project": cmd_project,
    "lift": cmd_lift,
    "fit": cmd_fit,
    "audit": cmd_audit,
    "fixture": cmd_fixture,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        outputs = HANDLERS[args.command](args)
        if outputs is not None:
            _write_manifest(args, _params(args), outputs)
    except ToolkitError as exc:
        msg = " ".join(str(exc).split())
        sys.stderr.write(f"cddaudit {args.command}: error: {msg}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"cddaudit {args.command}: error: IO_FAILURE: {exc}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
