"""Command-line front end.

Every subcommand writes its outputs plus ``manifest.json`` (config hash,
library versions, sha256 of each output) into the output directory.
``replay`` re-runs a manifest and checks the checksums.

Exit codes: 0 ok, 1 replay mismatch, 2 config error, 3 I/O error, 4 domain error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy

from . import __version__
from . import analysis as an
from . import config as rc
from . import container as fs
from . import rng as _rng
from . import sweeps
from .decode import DecodeError, MetricsError, decode_frame, evaluate, report_csv
from .foveation import (
    capture_frame,
    disocclusion_mask,
    flow_sequence,
    foveate,
    full_plan,
    full_resolution,
    limited_plan,
    parse_fraction,
    plan_fovea,
    quantized_st_capture,
    superpixel_st_capture,
    window_bins,
)
from .photon import simulate_cube
from .priors import (
    CalibrationError,
    CalibrationFit,
    Distortion,
    PriorFrame,
    calibrate_polynomial,
    sample_pixels,
    synth_monocular,
)
from .scene import DepthFrame, DepthRangeError, SceneSpecError, generate_moving_sequence, generate_scene

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_IO, EXIT_DOMAIN = 0, 1, 2, 3, 4


# -- helpers -----------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    return {
        "foveated_tof": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def write_manifest(out: Path, command: str, params: dict, cfg: dict | None, files: list[Path]) -> Path:
    manifest = {
        "command": command,
        "params": params,
        "config": cfg,
        "config_sha256": rc.config_hash(cfg) if cfg is not None else None,
        "versions": _versions(),
        "outputs": {p.name: _sha256(p) for p in sorted(files)},
    }
    path = out / "manifest.json"
    fs.dump_json(path, manifest)
    return path


def _list(text: str, cast: Callable = float) -> list:
    return [cast(t) for t in text.split(",") if t.strip()]


def _outdir(args, cfg: dict | None) -> Path:
    out = Path(args.out or (cfg or {}).get("output", {}).get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _overrides(args) -> dict:
    """Flags that mirror RunConfig keys; only those actually given."""
    o: dict[str, Any] = {}

    def put(section, key, value):
        if value is not None:
            if section is None:
                o[key] = value
            else:
                o.setdefault(section, {})[key] = value

    put(None, "seed", getattr(args, "seed", None))
    put(None, "decode", getattr(args, "decoder", None))
    for flag, key in (("cycles", "cycles"), ("phi_sig", "phi_sig"), ("phi_bkg", "phi_bkg"), ("fwhm", "pulse_fwhm_s"), ("n_bins", "n_bins"), ("z_max", "z_max_m")):
        put("sensor", key, getattr(args, flag, None))
    for flag in ("fraction", "mode", "nprime", "buckets", "samples_per_bucket", "segments", "floor_tau", "sampler", "aggregate"):
        put("policy", flag, getattr(args, flag, None))
    put("policy", "kind", getattr(args, "policy", None))
    if getattr(args, "no_fallback", False):
        put("policy", "fallback", False)
    return o


def _config(args) -> dict:
    user = rc.load(args.config) if getattr(args, "config", None) else {}
    return rc.resolve(user, _overrides(args))


def _scene(cfg: dict, sensor):
    s = cfg["scene"]
    if "depth_path" in s:
        depth = fs.load_container(s["depth_path"])
        if not isinstance(depth, DepthFrame):
            raise rc.ConfigError("scene depth_path must hold a depth frame")
        if "albedo_path" in s:
            albedo = fs.load_container(s["albedo_path"])
        else:
            from .scene import ReflectanceFrame

            albedo = ReflectanceFrame(np.full(depth.shape, float(s.get("albedo", 0.5))))
    else:
        desc = {k: v for k, v in s.items() if k != "frames"}
        depth, albedo = generate_scene(desc)
    depth.check_range(sensor)
    return depth, albedo


def _prior(cfg: dict, gt: DepthFrame, albedo, sensor, out: Path, files: list) -> PriorFrame:
    p = cfg["prior"]
    kind = p.get("kind", "perfect")
    if kind == "perfect":
        prior = PriorFrame(gt, "external")
    elif kind == "monocular":
        dist = Distortion(p.get("scale", 1.0), p.get("offset", 0.0), p.get("bias_amplitude", 0.0), p.get("noise_sigma", 0.0))
        prior = synth_monocular(gt, dist, sensor, _rng.stream(sensor.seed, _rng.PRIOR))
    else:
        if "path" not in p:
            raise rc.ConfigError("external prior needs 'path'")
        frame = fs.load_container(p["path"])
        if not isinstance(frame, DepthFrame):
            raise rc.ConfigError("external prior must be a depth frame")
        prior = PriorFrame(frame, "external")
    cal = p.get("calibration")
    if cal:
        fit = None
        if "fit_path" in cal:
            fit = CalibrationFit.from_json(json.loads(Path(cal["fit_path"]).read_text()))
            samples = []
        else:
            pts = sample_pixels(prior.frame, cal.get("samples", 16), _rng.stream(sensor.seed, _rng.CALIBRATION))
            mask = np.zeros(gt.shape, bool)
            for x, y in pts:
                mask[y, x] = True
            hists = capture_frame(gt, albedo, full_plan(gt.shape, sensor), sensor, frame=0, purpose=_rng.CALIBRATION, mask=mask)
            measured = decode_frame(hists, sensor, cfg["decode"])
            samples = [(x, y, float(measured.depth[y, x])) for x, y in pts]
        fit, prior = calibrate_polynomial(prior, samples, cal.get("degree", 1), (0.0, sensor.z_max), fit)
        path = out / "calibration.json"
        fit.save(path)
        files.append(path)
    return prior


def _run_policy(cfg: dict, gt, albedo, prior: PriorFrame, sensor):
    """Returns (depth, memory, gated mask, plan params)."""
    pol = cfg["policy"]
    kind = pol.get("kind", "memory")
    dec = cfg["decode"]
    sampler = pol.get("sampler", "poisson")
    frac = parse_fraction(pol.get("fraction", "1/16"))
    m = window_bins(frac, sensor.n_bins)
    params = {"policy": kind, "fraction": f"{frac.numerator}/{frac.denominator}", "window_bins": m}
    if kind == "full":
        res = full_resolution(gt, albedo, sensor, sampler, dec)
        return res.depth, res.memory, np.zeros(gt.shape, bool), {"policy": kind}
    if kind in ("memory", "depth"):
        n_sub = pol.get("nprime", sensor.n_bins) if kind == "depth" else None
        plan = plan_fovea(prior, frac, kind, sensor, n_sub)
        res = foveate(gt, albedo, plan, sensor, sampler, dec)
        params.update(mode=kind, nprime=n_sub)
        return res.depth, res.memory, ~plan.fallback, params
    if kind == "limited":
        if "nprime" not in pol:
            raise rc.ConfigError("limited policy needs nprime")
        res = foveate(gt, albedo, limited_plan(gt.shape, pol["nprime"], sensor), sensor, sampler, dec)
        return res.depth, res.memory, np.ones(gt.shape, bool), {"policy": kind, "nprime": pol["nprime"]}
    if kind == "quantized":
        mode = pol.get("mode", "memory")
        n_sub = pol.get("nprime", sensor.n_bins) if mode == "depth" else None
        res = quantized_st_capture(
            gt, albedo, prior, pol.get("buckets", 64), pol.get("samples_per_bucket", 50), frac, sensor,
            mode=mode, n_sub=n_sub, sampler=sampler, decoder=dec, aggregate=pol.get("aggregate", "min"),
        )
        params.update(mode=mode, nprime=n_sub, buckets=res.buckets.count, samples_per_bucket=list(res.samples_per_bucket), sparsity=res.sparsity)
        return res.depth, res.memory, res.sampled, params
    if kind == "superpixel":
        frac = parse_fraction(pol.get("fraction", "1/4"))
        res = superpixel_st_capture(gt, albedo, sensor, pol.get("segments", 64), frac, pol.get("compactness", 10.0), sampler, dec)
        params.update(
            fraction=f"{frac.numerator}/{frac.denominator}",
            window_bins=window_bins(frac, sensor.n_bins),
            segments=res.segments.count,
            reduced_fraction=res.reduced_fraction,
        )
        gated = np.ones(gt.shape, bool)
        for x, y in res.segments.centroids:
            gated[y, x] = False
        return res.depth, res.memory, gated, params
    raise rc.ConfigError("the flow policy runs through the 'sequence' subcommand")


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(args, cfg, out: Path) -> list[Path]:
    sensor = rc.sensor_of(cfg)
    gt, albedo = _scene(cfg, sensor)
    files = [out / "gt_depth.fspd", out / "albedo.fspd", out / "cube.fspd", out / "cube.json", out / "sensor.json"]
    fs.save_depth(files[0], gt)
    fs.save_reflectance(files[1], albedo)
    fs.save_histograms(files[2], simulate_cube(gt, albedo, sensor))
    fs.dump_json(files[3], {"start_bin": 0, "n_bins": sensor.n_bins, "bin_width_s": sensor.bin_width, "sampler": "poisson"})
    fs.save_sensor_config(files[4], sensor)
    return files


def cmd_foveate(args, cfg, out: Path) -> list[Path]:
    sensor = rc.sensor_of(cfg)
    gt, albedo = _scene(cfg, sensor)
    files: list[Path] = []
    prior = _prior(cfg, gt, albedo, sensor, out, files)
    depth, memory, gated, params = _run_policy(cfg, gt, albedo, prior, sensor)
    names = {"depth": "depth.fspd", "prior": "prior.fspd", "plan": "plan.fspd", "plan_json": "plan.json", "memory": "memory.json", "metrics": "metrics.csv"}
    fs.save_depth(out / names["depth"], depth)
    fs.save_depth(out / names["prior"], prior.frame)
    fs.save_mask(out / names["plan"], gated)
    fs.dump_json(out / names["plan_json"], params)
    fs.dump_json(out / names["memory"], memory.to_dict())
    (out / names["metrics"]).write_text(report_csv(evaluate(depth, gt), memory))
    return files + [out / n for n in names.values()]


def cmd_metrics(args, cfg, out: Path) -> list[Path]:
    pred = fs.load_container(args.pred)
    gt = fs.load_container(args.gt)
    if not isinstance(pred, DepthFrame) or not isinstance(gt, DepthFrame):
        raise rc.ConfigError("metrics compares two depth frames")
    report = evaluate(pred, gt)
    files = [out / "metrics.csv", out / "metrics.json"]
    files[0].write_text(report_csv(report))
    fs.dump_json(files[1], report.to_dict())
    print(json.dumps(report.to_dict(), sort_keys=True))
    return files


def cmd_analyze(args, cfg, out: Path) -> list[Path]:
    if args.subkind == "worstcase":
        result = an.worstcase_report(args.pmp, args.M, args.pfloor, args.S, args.pgt)
    elif args.subkind == "snr":
        result = {}
        for regime in an.SNR_REGIMES:
            result[regime] = an.snr(an.SnrModel(regime, args.N, args.M, args.T, args.C, args.C_new))
        result["depth_over_conventional"] = result["depth"] / result["conventional"]
        result["compensating_cycles"] = an.compensating_cycles(args.C, args.N, args.M)
    else:
        model = an.SbrModel(args.phi_sig, args.phi_bkg, args.i, args.j, args.N, args.M, args.regime)
        v = an.sbr(model)
        result = {"regime": args.regime, "sbr": str(v) if isinstance(v, an.BackgroundFree) else v, "p_sig": an.p_sig(model)}
    print(json.dumps(result, sort_keys=True))
    path = out / f"analysis_{args.subkind}.json"
    fs.dump_json(path, result)
    return [path]


def cmd_sweep(args, cfg, out: Path) -> list[Path]:
    kind = args.kind
    if kind == "worstcase":
        table = sweeps.worstcase_sweep(args.M, args.pmp, args.pfloor, args.S, args.points)
    elif kind == "snr":
        table = sweeps.snr_sweep(args.N, _list(args.Ms, int), args.C)
    elif kind == "sbr":
        table = sweeps.sbr_sweep(args.phi_sig_sweep, args.phi_bkg_sweep, _list(args.peaks, int), args.N, args.M)
    else:
        user = rc.load(args.config) if args.config else {}
        rc.validate(user)
        base = sweeps.sweeps_base_sensor(user.get("sensor", {}))
        table = sweeps.sim_quality_sweep(
            _list(args.exposures, lambda t: int(float(t))),
            _list(args.fractions, str),
            _list(args.seeds, int),
            base=base,
            scene=user.get("scene"),
            decoder=user.get("decode", "argmax"),
        )
    path = out / f"sweep_{kind}.csv"
    path.write_text(table.to_csv())
    return [path]


def cmd_sequence(args, cfg, out: Path) -> list[Path]:
    sensor = rc.sensor_of(cfg)
    desc = dict(cfg["scene"])
    frames = int(desc.pop("frames", 16))
    seq = generate_moving_sequence(desc, frames)
    for d in seq.depths:
        d.check_range(sensor)
    pol = cfg["policy"]
    frac = parse_fraction(pol.get("fraction", "1/16"))
    res = flow_sequence(seq, frac, sensor, pol.get("floor_tau", 3.0), pol.get("fallback", True), pol.get("sampler", "poisson"), cfg["decode"])
    files: list[Path] = []
    rows = ["frame,rmse,ssd,running_rmse,flagged,disoccluded,covered,bins,factor"]
    total = 0.0
    for t, (d, mask, mem) in enumerate(zip(res.depths, res.masks, res.memory)):
        fs.save_depth(out / f"depth_{t:03d}.fspd", d)
        fs.save_mask(out / f"mask_{t:03d}.fspd", mask)
        files += [out / f"depth_{t:03d}.fspd", out / f"mask_{t:03d}.fspd"]
        m = evaluate(DepthFrame(np.where(d.valid, d.depth, 0.0)), seq.depths[t])
        total += m.rmse
        dis = disocclusion_mask(seq, t) if t else np.zeros(d.shape, bool)
        rows.append(
            f"{t},{m.rmse!r},{m.ssd!r},{total / (t + 1)!r},{int(mask.sum())},{int(dis.sum())},"
            f"{int((dis & mask).sum())},{mem.bins_recorded},{float(mem.reduction)!r}"
        )
    path = out / "sequence.csv"
    path.write_text("\n".join(rows) + "\n")
    return files + [path]


COMMANDS = {
    "simulate": cmd_simulate,
    "foveate": cmd_foveate,
    "metrics": cmd_metrics,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
    "sequence": cmd_sequence,
}
_USES_CONFIG = {"simulate", "foveate", "sequence"}
_PARAM_SKIP = {"command", "config", "out"}


def run(args) -> int:
    if args.command == "replay":
        return replay(args)
    cfg = _config(args) if args.command in _USES_CONFIG else None
    out = _outdir(args, cfg)
    files = COMMANDS[args.command](args, cfg, out)
    params = {k: v for k, v in sorted(vars(args).items()) if k not in _PARAM_SKIP}
    if args.command == "sweep" and args.config:
        params["sweep_config"] = rc.load(args.config)
    write_manifest(out, args.command, params, cfg, files)
    return EXIT_OK


def replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    command = manifest["command"]
    if command not in COMMANDS:
        raise rc.ConfigError(f"manifest names unknown command {command!r}")
    params = dict(manifest["params"])
    sweep_cfg = params.pop("sweep_config", None)
    out = Path(args.out or Path(args.manifest).parent)
    out.mkdir(parents=True, exist_ok=True)
    ns = argparse.Namespace(command=command, out=str(out), config=None, **params)
    if sweep_cfg is not None:
        ns.config = str(out / "_sweep_config.json")
        fs.dump_json(ns.config, sweep_cfg)
    cfg = manifest["config"]
    if cfg is not None:
        rc.validate(cfg)
    files = COMMANDS[command](ns, cfg, out)
    got = {p.name: _sha256(p) for p in files}
    if got != manifest["outputs"]:
        bad = sorted(k for k in set(got) | set(manifest["outputs"]) if got.get(k) != manifest["outputs"].get(k))
        print(f"replay mismatch: {', '.join(bad)}", file=sys.stderr)
        return EXIT_MISMATCH
    print(f"replay ok: {len(got)} outputs match")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="RunConfig JSON; flags override its keys")
    p.add_argument("--out", help="output directory (default: config output.dir)")
    p.add_argument("--seed", type=int)
    p.add_argument("--decoder", choices=("argmax", "matched"))
    g = p.add_argument_group("sensor")
    g.add_argument("--cycles", type=int)
    g.add_argument("--phi-sig", type=float)
    g.add_argument("--phi-bkg", type=float)
    g.add_argument("--fwhm", type=float, help="laser pulse FWHM in seconds")
    g.add_argument("--n-bins", type=int)
    g.add_argument("--z-max", type=float)
    g = p.add_argument_group("policy")
    g.add_argument("--policy", choices=("full", "memory", "depth", "limited", "quantized", "superpixel", "flow"))
    g.add_argument("--fraction", help="gate fraction f, e.g. 1/16")
    g.add_argument("--mode", choices=("memory", "depth"))
    g.add_argument("--nprime", type=int)
    g.add_argument("--buckets", type=int)
    g.add_argument("--samples-per-bucket", type=int)
    g.add_argument("--segments", type=int)
    g.add_argument("--floor-tau", type=float)
    g.add_argument("--aggregate", choices=("min", "median"))
    g.add_argument("--sampler", choices=("poisson", "pileup"))
    g.add_argument("--no-fallback", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="foveated-tof", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    for name, text in (("simulate", "render a full-resolution photon cube"), ("foveate", "run a foveation policy and decode"), ("sequence", "flow-driven foveation over a moving scene")):
        _add_run_flags(sub.add_parser(name, help=text))

    p = sub.add_parser("metrics", help="compare two depth frames")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--out")

    p = sub.add_parser("analyze", help="closed-form analyses (JSON to stdout)")
    p.add_argument("--out")
    asub = p.add_subparsers(dest="subkind", required=True)
    w = asub.add_parser("worstcase")
    w.add_argument("--M", type=int, required=True)
    w.add_argument("--pmp", type=float, required=True)
    w.add_argument("--pfloor", type=float, default=1.0)
    w.add_argument("--S", type=int, default=1)
    w.add_argument("--pgt", type=float)
    s = asub.add_parser("snr")
    s.add_argument("--N", type=int, default=1000)
    s.add_argument("--M", type=int, required=True)
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--C", type=float, default=1.0)
    s.add_argument("--C-new", dest="C_new", type=float)
    b = asub.add_parser("sbr")
    b.add_argument("--phi-sig", type=float, required=True)
    b.add_argument("--phi-bkg", type=float, required=True)
    b.add_argument("--i", type=int, required=True)
    b.add_argument("--j", type=int, default=1)
    b.add_argument("--N", type=int, default=1000)
    b.add_argument("--M", type=int, default=1000)
    b.add_argument("--regime", choices=an.SBR_REGIMES, default="conventional")

    p = sub.add_parser("sweep", help="tabulate an analysis or the simulation over a grid")
    p.add_argument("--kind", choices=sweeps.SWEEP_KINDS, required=True)
    p.add_argument("--out")
    p.add_argument("--config", help="sim-quality: RunConfig with sensor/scene overrides")
    p.add_argument("--M", type=int, default=1000)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--pmp", type=float, default=0.001)
    p.add_argument("--pfloor", type=float, default=1.0)
    p.add_argument("--S", type=int, default=1)
    p.add_argument("--points", type=int, default=1001)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--Ms", default="31,62,125,250,500,1000")
    p.add_argument("--phi-sig", dest="phi_sig_sweep", type=float, default=1.0)
    p.add_argument("--phi-bkg", dest="phi_bkg_sweep", type=float, default=0.01)
    p.add_argument("--peaks", default="5,10,50,100,500,900")
    p.add_argument("--exposures", default="100,1000,10000")
    p.add_argument("--fractions", default="1/32,1/16,1/8,1/4,1/2,1")
    p.add_argument("--seeds", default="0")

    p = sub.add_parser("replay", help="re-run a manifest and verify output checksums")
    p.add_argument("manifest")
    p.add_argument("--out", help="write outputs here instead of the manifest's directory")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (rc.ConfigError, SceneSpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, fs.ContainerError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DepthRangeError, DecodeError, MetricsError, CalibrationError, an.AnalysisDomainError, ValueError) as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
