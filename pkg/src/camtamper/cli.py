"""``camtamper`` command line: toy -> synth -> extract -> stationarity -> fit -> evaluate.

Every command reads the same TOML config, writes under ``--out-dir`` and is
deterministic for a given config and seed. Timestamps go only to ``logs/``.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, derive_seed, load_config
from .evaluate import CLASSES, build_report, validate_report, write_roc_csv
from .features import FEATURE_IDS, FeatureConfig, extract_residuals, read_residual_csv, write_residual_csv
from .frames import FrameError, open_sequence, resize, save_pgm
from .synth import (TamperSchedule, ToyScene, make_schedule, read_annotations, synthesize,
                    write_annotations)
from .tsa import (NumericalError, fit_grid, best_fit, forecast_insample, kpss_test, adf_test,
                  log_offset, log_lag_transform, difference, srmse)

log = logging.getLogger("camtamper")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# -- helpers -----------------------------------------------------------------------


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _write_manifest(paths: list[Path], manifest: Path) -> None:
    base = manifest.parent
    lines = [Path(os.path.relpath(p, base)).as_posix() for p in paths]
    manifest.write_text("\n".join(lines) + "\n")


def _feature_config(cfg: RunConfig) -> FeatureConfig:
    f = cfg.features
    return FeatureConfig(alpha=f.alpha, n_delay=f.n_delay, K=f.K, strong_edge_threshold=f.strong_edge_threshold,
                         harris_threshold=f.harris_threshold, keypoint_refresh=f.keypoint_refresh,
                         e4_and_only=f.e4_and_only)


def _analysis_rows(path: Path):
    """Residuals restricted per feature to valid rows, skipping the self-compared first frame."""
    idx, values, mask = read_residual_csv(path)
    out = {}
    for bit, f in enumerate(FEATURE_IDS):
        keep = ((mask >> bit) & 1).astype(bool) & (idx >= 1)
        out[f] = values[f][keep]
    return out


def _segments(n: int, seg: int) -> list[tuple[int, int]]:
    """Split ``n`` rows into blocks of ``seg``; a short tail is merged into the previous block."""
    if n <= seg:
        return [(0, n)]
    bounds = list(range(0, n, seg))
    segs = [(b, min(b + seg, n)) for b in bounds]
    if len(segs) > 1 and segs[-1][1] - segs[-1][0] < seg // 2:
        last = segs.pop()
        segs[-1] = (segs[-1][0], last[1])
    return segs


# -- commands ------------------------------------------------------------------------


def cmd_toy(cfg: RunConfig, out: Path) -> dict:
    t = cfg.toy
    scene = ToyScene(t.frames, t.width, t.height, derive_seed(cfg.run.seed, "toy"), orbit_period=t.orbit_period,
                     drift=t.drift, drift_period=t.drift_period, frame_rate=cfg.run.fps)
    frame_dir = out / "toy" / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    for stale in frame_dir.glob("*.pgm"):
        stale.unlink()
    paths = []
    for i, frame in enumerate(scene):
        p = frame_dir / f"{i:06d}.pgm"
        save_pgm(frame, p)
        paths.append(p)
    _write_manifest(paths, out / "toy" / "manifest.txt")
    return {"frames": len(paths), "manifest": str(out / "toy" / "manifest.txt")}


def cmd_synth(cfg: RunConfig, out: Path) -> dict:
    s = cfg.synth
    source = Path(s.source) if s.source else out / "toy" / "manifest.txt"
    seq = open_sequence(source, cfg.run.fps)
    n = len(seq)
    seed = derive_seed(cfg.run.seed, "synth")
    if s.enabled:
        schedule = make_schedule(n, cfg.run.fps, s.period_s, s.dur_min_s, s.dur_max_s, seed,
                                 s.extent, s.rate_frames, s.fill)
    else:
        schedule = TamperSchedule([], n, seed)

    normal_dir = out / "normal"
    tampered_dir = out / "tampered"
    normal_dir.mkdir(parents=True, exist_ok=True)
    (tampered_dir / "frames").mkdir(parents=True, exist_ok=True)
    for stale in (tampered_dir / "frames").glob("*.pgm"):
        stale.unlink()

    _write_manifest(list(seq.paths[seq.start : seq.stop]), normal_dir / "manifest.txt")
    tampered_paths, labels = [], []
    for i, (frame, label) in enumerate(synthesize(seq, schedule)):
        if label == "normal":
            tampered_paths.append(seq.paths[seq.start + i])
        else:
            p = tampered_dir / "frames" / f"{i:06d}.pgm"
            save_pgm(frame, p)
            tampered_paths.append(p)
        labels.append(label)
    _write_manifest(tampered_paths, tampered_dir / "manifest.txt")
    (out / "schedule.json").write_text(schedule.to_json())
    write_annotations(labels, out / "annotations.csv")
    tampered = sum(lab != "normal" for lab in labels)
    return {"frames": n, "events": len(schedule.events), "tampered_fraction": tampered / n}


def _extract_one(manifest: Path, dest: Path, cfg: RunConfig) -> int:
    seq = open_sequence(manifest, cfg.run.fps)
    w, h = cfg.frame.width, cfg.frame.height
    frames = (resize(f, w, h) for f in seq)
    return write_residual_csv(extract_residuals(frames, _feature_config(cfg)), dest)


def cmd_extract(cfg: RunConfig, out: Path) -> dict:
    res_dir = out / "residuals"
    res_dir.mkdir(parents=True, exist_ok=True)
    rows = {}
    for name in ("normal", "tampered"):
        manifest = out / name / "manifest.txt"
        if manifest.exists():
            rows[name] = _extract_one(manifest, res_dir / f"{name}.csv", cfg)
    if not rows:
        raise FrameError(f"no normal/ or tampered/ manifest under {out}; run synth first")
    return rows


def cmd_stationarity(cfg: RunConfig, out: Path) -> dict:
    series = _analysis_rows(out / "residuals" / "normal.csv")
    rows = []
    for f in FEATURE_IDS:
        x = series[f]
        for k, (a, b) in enumerate(_segments(len(x), cfg.tsa.segment_frames)):
            seg = x[a:b]
            for stage in ("raw", "transformed"):
                row = {"feature": f, "segment": k, "stage": stage, "n": int(b - a)}
                try:
                    y = seg if stage == "raw" else log_lag_transform(seg).values
                    adf = adf_test(y)
                    kpss = kpss_test(y)
                    row.update(adf_stat=adf.statistic, adf_reject_unit_root=adf.flag,
                               kpss_stat=kpss.statistic, kpss_accept_stationary=kpss.flag, error=None)
                except (ValueError, NumericalError, np.linalg.LinAlgError) as exc:
                    row.update(adf_stat=None, adf_reject_unit_root=None, kpss_stat=None,
                               kpss_accept_stationary=None, error=str(exc))
                rows.append(row)
    _dump_json({"root_seed": cfg.run.seed, "critical_values": {"adf": -2.861, "kpss": 0.463}, "rows": rows},
               out / "stationarity.json")
    accepted = sum(1 for r in rows if r["stage"] == "transformed" and r["kpss_accept_stationary"])
    return {"rows": len(rows), "transformed_kpss_accepts": accepted}


def _fit_feature_segment(args):
    f, k, a, b, seg, tsa = args
    rec = {"feature": f, "segment": k, "start": int(a), "stop": int(b)}
    try:
        y, min_f = log_offset(seg)
        fits = fit_grid(y, tsa["p_max"], tsa["q_max"], tsa["d"])
        order, fit = best_fit(fits)
        x = difference(y, tsa["d"]).values if tsa["d"] else y
        window = min(tsa["window"], len(x) - max(fit.n_cond, fit.order.p))
        pred = forecast_insample(fit, x, window)
        actual = x[-window:]
        err = srmse(actual, pred)
        rec.update(log_offset=min_f, fit=fit.to_dict(), window=int(window),
                   srmse=err if np.isfinite(err) else None, error=None)
        return rec, (actual, pred)
    except (ValueError, NumericalError, np.linalg.LinAlgError) as exc:
        rec.update(log_offset=None, fit=None, window=0, srmse=None, error=str(exc))
        return rec, None


def cmd_fit(cfg: RunConfig, out: Path, jobs: int = 1) -> dict:
    series = _analysis_rows(out / "residuals" / "normal.csv")
    tsa = {"p_max": cfg.tsa.p_max, "q_max": cfg.tsa.q_max, "d": cfg.tsa.d, "window": cfg.tsa.window}
    tasks = []
    for f in FEATURE_IDS:
        x = series[f]
        for k, (a, b) in enumerate(_segments(len(x), cfg.tsa.segment_frames)):
            tasks.append((f, k, a, b, x[a:b], tsa))
    pool = ProcessPoolExecutor(jobs) if jobs > 1 else nullcontext()
    with pool as ex:
        results = list(ex.map(_fit_feature_segment, tasks)) if jobs > 1 else [_fit_feature_segment(t) for t in tasks]

    records = [r for r, _ in results]
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "segment", "t", "actual", "predicted"])
        for rec, pair in results:
            if pair is None:
                continue
            for t, (av, pv) in enumerate(zip(*pair)):
                w.writerow([rec["feature"], rec["segment"], t, repr(float(av)), repr(float(pv))])
    _dump_json({"root_seed": cfg.run.seed, "grid": tsa, "fits": records}, out / "fits.json")
    failed = sum(1 for r in records if r["fit"] is None)
    if failed == len(records):
        raise NumericalError("every ARIMA fit failed")
    return {"fits": len(records), "failed": failed}


def cmd_evaluate(cfg: RunConfig, out: Path, feature: str | None = None) -> dict:
    features = FEATURE_IDS if feature is None else (feature,)
    if feature is not None and feature not in FEATURE_IDS:
        raise UsageError(f"unknown feature {feature!r}")
    idx_n, normal, mask_n = read_residual_csv(out / "residuals" / "normal.csv")
    idx_t, tampered, mask_t = read_residual_csv(out / "residuals" / "tampered.csv")
    ann_idx, labels = read_annotations(out / "annotations.csv")
    if not (np.array_equal(idx_n, idx_t) and np.array_equal(idx_n, ann_idx)):
        raise FrameError("residual and annotation frame indices are misaligned")
    valid = {f: ((mask_n >> b) & 1).astype(bool) & ((mask_t >> b) & 1).astype(bool) & (idx_n >= 1)
             for b, f in enumerate(FEATURE_IDS)}
    fits_path = out / "fits.json"
    fits = json.loads(fits_path.read_text())["fits"] if fits_path.exists() else None
    curves: dict = {}
    report = build_report(normal, tampered, labels, valid, fits, features, cfg.eval.warmup_frames, curves)
    report["meta"]["root_seed"] = cfg.run.seed
    config = cfg.to_dict()
    # where the run was written is not part of the result; keeps reports comparable across runs
    config["run"].pop("out_dir", None)
    report["meta"]["config"] = config
    validate_report(report)
    _dump_json(report, out / "report.json")
    roc_dir = out / "roc"
    roc_dir.mkdir(exist_ok=True)
    for (f, cls), curve in sorted(curves.items()):
        write_roc_csv(curve, roc_dir / f"{f}_{cls}.csv")
    return {f: {c: report["features"][f]["classes"][c]["auc"] for c in CLASSES} for f in features}


# -- entry point -----------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="root seed (overrides run.seed)")
    common.add_argument("--jobs", type=int, help="worker processes (overrides run.jobs)")
    common.add_argument("--out-dir", help="output directory (overrides run.out_dir)")

    parser = argparse.ArgumentParser(prog="camtamper", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    toy = sub.add_parser("toy", parents=[common], help="render the synthetic scene")
    toy.add_argument("--frames", type=int)
    toy.add_argument("--width", type=int)
    toy.add_argument("--height", type=int)
    synth = sub.add_parser("synth", parents=[common], help="build normal and tampered datasets")
    synth.add_argument("--source", help="frame directory or manifest (default: the toy output)")
    synth.add_argument("--no-tamper", action="store_true", help="empty schedule")
    sub.add_parser("extract", parents=[common], help="compute residual CSVs")
    sub.add_parser("stationarity", parents=[common], help="ADF/KPSS before and after transform")
    sub.add_parser("fit", parents=[common], help="per-segment ARIMA order selection and prediction")
    ev = sub.add_parser("evaluate", parents=[common], help="robustness and detection report")
    ev.add_argument("--feature", help="restrict the report to one feature")
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.jobs is not None:
        overrides.append(f"run.jobs={args.jobs}")
    if args.out_dir is not None:
        overrides.append(f"run.out_dir={json.dumps(args.out_dir)}")
    if args.command == "toy":
        for name in ("frames", "width", "height"):
            v = getattr(args, name)
            if v is not None:
                overrides.append(f"toy.{name}={v}")
    if args.command == "synth":
        if args.source:
            overrides.append(f"synth.source={json.dumps(args.source)}")
        if args.no_tamper:
            overrides.append("synth.enabled=false")
    return load_config(args.config, overrides)


def _error(code: int, kind: str, exc: BaseException) -> int:
    record = {"error": {"exit_code": code, "kind": kind, "type": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        cfg = _config_from_args(args)
    except ConfigError as exc:
        return _error(EXIT_USAGE, "usage", exc)

    out = Path(cfg.run.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "logs").mkdir(exist_ok=True)
    except OSError as exc:
        return _error(EXIT_DATA, "data", exc)
    handler = logging.FileHandler(out / "logs" / f"{args.command}.log", mode="a")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    try:
        log.info("start %s seed=%d at %s", args.command, cfg.run.seed, _dt.datetime.now().isoformat())
        if args.command == "toy":
            summary = cmd_toy(cfg, out)
        elif args.command == "synth":
            summary = cmd_synth(cfg, out)
        elif args.command == "extract":
            summary = cmd_extract(cfg, out)
        elif args.command == "stationarity":
            summary = cmd_stationarity(cfg, out)
        elif args.command == "fit":
            summary = cmd_fit(cfg, out, cfg.run.jobs)
        else:
            summary = cmd_evaluate(cfg, out, args.feature)
        log.info("done %s %s", args.command, json.dumps(summary, sort_keys=True))
        print(json.dumps(summary, sort_keys=True))
        return EXIT_OK
    except UsageError as exc:
        return _error(EXIT_USAGE, "usage", exc)
    except NumericalError as exc:
        return _error(EXIT_NUMERIC, "numerical", exc)
    except (FrameError, FileNotFoundError, KeyError, ValueError, OSError) as exc:
        return _error(EXIT_DATA, "data", exc)
    finally:
        log.removeHandler(handler)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
