"""Experiment harness: config parsing, run dispatch, reports and histograms.

Subcommands: ``run`` (full perfect-sampling experiment), ``calibrate``
(exploratory-CFTP block length), ``hist`` (histogram CSV from a samples
file).  Configs are plain ``key = value`` text with command-line
overrides; every field is echoed into the output report.  Rerunning any
config with the same seed produces bitwise-identical artifacts, with or
without a worker pool.
"""

from __future__ import annotations

import argparse
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import coupling, metrics as metrics_mod, targets as targets_mod
from .dynamics import KineticEnergy, time_step_for
from .errors import CalibrationError, ConfigError, PerfHmcError
from .trajectories import get_sampler

REPORT_SCHEMA_VERSION = 1

TARGET_NAMES = ("standard_normal", "correlated_normal", "t_distribution",
                "normal_mixture", "lasso")
SAMPLER_NAMES = ("raw", "nuts", "nuts4", "fruts")


@dataclass
class RunConfig:
    """Validated run configuration; defaults follow the reference settings."""

    target: str
    sampler: str
    n_s: int
    d: int = 0
    rho: float = 0.0
    nu: float = 4.0
    mu: float = 4.0
    lam: float = 0.0
    dataset: str = ""
    h: float = 0.05
    alpha: float = 2.0
    beta: float = 2.0
    w: float = 0.01
    n_b: int = 14
    n_t: int = 0                # 0 means "calibrate"
    seed: int = 0
    out: str = "."
    workers: int = 1
    scale: bool = True
    fruts_n_limit: int = 256
    bins: int = 60
    calibrate_runs: int = 20
    calibrate_cap: int = 2**14


_BOOL_FIELDS = {"scale"}
_INT_FIELDS = {"d", "n_s", "n_b", "n_t", "seed", "workers", "fruts_n_limit",
               "bins", "calibrate_runs", "calibrate_cap"}
_FLOAT_FIELDS = {"rho", "nu", "mu", "lam", "h", "alpha", "beta", "w"}
_STR_FIELDS = {"target", "sampler", "dataset", "out"}


def parse_config_file(path) -> dict:
    """Plain key = value lines; # starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = val
    return values


def _convert(key: str, val):
    if not isinstance(val, str):
        return val
    if key in _BOOL_FIELDS:
        low = val.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"field '{key}': expected a boolean, got {val!r}")
    if key in _INT_FIELDS:
        if key == "n_t" and val == "calibrate":
            return 0
        try:
            return int(val)
        except ValueError as exc:
            raise ConfigError(f"field '{key}': expected an integer, got {val!r}") from exc
    if key in _FLOAT_FIELDS:
        try:
            return float(val)
        except ValueError as exc:
            raise ConfigError(f"field '{key}': expected a number, got {val!r}") from exc
    return val


def make_config(values: dict) -> RunConfig:
    """Validate raw key/value pairs into a RunConfig; errors name the field."""
    known = set(RunConfig.__dataclass_fields__)
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown config field '{key}'")
    conv = {k: _convert(k, v) for k, v in values.items()}
    for required in ("target", "sampler", "n_s"):
        if required not in conv:
            raise ConfigError(f"missing required field '{required}'")
    if "scale" not in conv and conv["target"] == "correlated_normal":
        conv["scale"] = False  # correlated-normal runs are deliberately unscaled
    cfg = RunConfig(**conv)
    if cfg.target not in TARGET_NAMES:
        raise ConfigError(f"field 'target': unknown target '{cfg.target}'")
    if cfg.sampler not in SAMPLER_NAMES:
        raise ConfigError(f"field 'sampler': unknown sampler '{cfg.sampler}'")
    if cfg.target == "lasso":
        if cfg.d not in (0, 12):
            raise ConfigError("field 'd': the lasso model fixes d = 12")
        cfg.d = 12
    elif cfg.d < 1:
        raise ConfigError(f"field 'd': dimension must be >= 1, got {cfg.d}")
    if cfg.n_s < 1:
        raise ConfigError(f"field 'n_s': need at least 1 sample set, got {cfg.n_s}")
    if cfg.n_b < 2:
        raise ConfigError(f"field 'n_b': need at least 2 blocks, got {cfg.n_b}")
    if cfg.n_t < 0:
        raise ConfigError(f"field 'n_t': must be positive or 'calibrate', got {cfg.n_t}")
    if not 0 < cfg.h:
        raise ConfigError(f"field 'h': must be positive, got {cfg.h}")
    if cfg.w <= 0:
        raise ConfigError(f"field 'w': must be positive, got {cfg.w}")
    if cfg.beta != 2.0:
        raise ConfigError("field 'beta': only beta = 2 is validated; refusing to run")
    if cfg.workers < 1:
        raise ConfigError(f"field 'workers': must be >= 1, got {cfg.workers}")
    return cfg


def _resolve_dataset(cfg: RunConfig):
    if cfg.target != "lasso":
        return None
    data_dir = os.environ.get("PERFHMC_DATA_DIR")
    if cfg.dataset:
        p = Path(cfg.dataset)
        if not p.is_absolute() and data_dir:
            p = Path(data_dir) / p
        return p
    if data_dir:
        candidate = Path(data_dir) / "diabetes.txt"
        if candidate.exists():
            return candidate
    return None  # packaged default


def build_target(cfg: RunConfig):
    """Construct (and scale, unless disabled) the configured target."""
    meta = {}
    if cfg.target == "standard_normal":
        t = targets_mod.make_standard_normal(cfg.d)
    elif cfg.target == "correlated_normal":
        spec = targets_mod.CorrelatedNormalSpec(cfg.d, cfg.rho)
        meta["aspect_ratio"] = spec.aspect_ratio
        t = targets_mod.make_correlated_normal(spec)
    elif cfg.target == "t_distribution":
        t = targets_mod.make_t_distribution(cfg.d, cfg.nu)
    elif cfg.target == "normal_mixture":
        t = targets_mod.make_normal_mixture(targets_mod.MixtureSpec(cfg.d, cfg.mu))
    elif cfg.target == "lasso":
        X, y, info = targets_mod.load_diabetes(_resolve_dataset(cfg))
        meta["standardization"] = {
            "predictor_means": info["predictor_means"],
            "predictor_stds": info["predictor_stds"],
        }
        meta["lasso_J"] = info["J"]
        t = targets_mod.make_lasso(X, y, cfg.lam)
    else:  # pragma: no cover - guarded by make_config
        raise ConfigError(f"field 'target': unknown target '{cfg.target}'")
    if cfg.scale:
        t = targets_mod.scale_transform(t)
    return t, meta


def _worker(payload):
    """Run a contiguous chunk of sample sets (process-pool entry point)."""
    cfg = RunConfig(**payload["config"])
    target, _ = build_target(cfg)
    kin = KineticEnergy(cfg.beta)
    sampler = get_sampler(cfg.sampler, cfg.fruts_n_limit)
    dt = payload["dt"]
    points = []
    agg = metrics_mod.EvalMetrics()
    error = False
    for i_S in payload["sets"]:
        res = coupling.run_sample_set(target, sampler, kin, dt, payload["n_t"],
                                      cfg.n_b, cfg.w, cfg.seed, i_S)
        points.append(res.points)
        agg = metrics_mod.merge(agg, res.metrics)
        error |= res.error
    return np.vstack(points), error, agg


def run_sets_parallel(cfg: RunConfig, dt: float, n_t: int):
    """Fan sample sets out to a worker pool; order-stable aggregation."""
    payload_base = {"config": asdict(cfg), "dt": dt, "n_t": n_t}
    set_ids = list(range(cfg.n_s))
    if cfg.workers == 1:
        return _worker(dict(payload_base, sets=set_ids))
    n_chunks = min(len(set_ids), cfg.workers * 4)
    chunks = [sorted(set_ids[i::n_chunks]) for i in range(n_chunks)]
    chunks = [c for c in chunks if c]
    payloads = [dict(payload_base, sets=c) for c in chunks]
    per_set = {}
    errors = []
    mets = []
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        for chunk, (pts, err, met) in zip(chunks, pool.map(_worker, payloads)):
            for i_S, rows in zip(chunk, np.split(pts, len(chunk))):
                per_set[i_S] = rows
            errors.append(err)
            mets.append(met)
    points = np.vstack([per_set[i] for i in set_ids])
    agg = metrics_mod.EvalMetrics()
    for m in mets:
        agg = metrics_mod.merge(agg, m)
    return points, any(errors), agg


def _column_names(cfg: RunConfig, d: int):
    if cfg.target == "lasso":
        return [f"beta_{j}" for j in range(1, d - 1)] + ["beta_0", "log_sigma"]
    return [f"q{j}" for j in range(1, d + 1)]


def write_samples_csv(path, samples, cfg: RunConfig):
    names = _column_names(cfg, samples.shape[1])
    with open(path, "w") as fh:
        fh.write(f"# seed = {cfg.seed}\n")
        fh.write("# coordinates: original (unscaled)\n")
        fh.write(",".join(names) + "\n")
        for row in samples:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def emit_histogram(samples, variable, bins, out_path, cfg: RunConfig | None = None,
                   lasso_context=None):
    """Bin edges + counts CSV for one variable of a sample matrix.

    ``variable`` is a 1-based coordinate index, or "T"/"S" for the
    lasso summaries (sum of absolute coefficients, residual sum of
    squares), which need the lasso design matrix context.
    """
    if variable in ("T", "S"):
        if lasso_context is None:
            raise ConfigError(f"field 'variable': {variable} requires a lasso run")
        X, y = lasso_context
        if variable == "T":
            values = targets_mod.lasso_T(samples, X.shape[1])
        else:
            values = targets_mod.lasso_S(samples, X, y)
    else:
        try:
            idx = int(variable)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"field 'variable': expected coordinate index, 'T' or 'S', got {variable!r}") from exc
        if not 1 <= idx <= samples.shape[1]:
            raise ConfigError(f"field 'variable': coordinate {idx} outside 1..{samples.shape[1]}")
        values = samples[:, idx - 1]
    counts, edges = np.histogram(values, bins=bins)
    with open(out_path, "w") as fh:
        fh.write(f"# variable = {variable}\n")
        fh.write(f"# min = {values.min():.17g}\n")
        fh.write(f"# max = {values.max():.17g}\n")
        fh.write("bin_left,bin_right,count\n")
        for lo, hi, n in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{lo:.17g},{hi:.17g},{n}\n")
    return values


def _within_set_autocorr(samples: np.ndarray, n_b: int) -> float:
    """Lag-1 autocorrelation of coordinate 1 inside sample sets, pooled."""
    if samples.shape[0] < 2 * n_b:
        return 0.0
    x = samples[:, 0].reshape(-1, n_b)
    x = x - x.mean()
    num = float(np.sum(x[:, :-1] * x[:, 1:]))
    den = float(np.sum(x * x))
    return num / den if den else 0.0


def run_experiment(cfg: RunConfig) -> int:
    """Full experiment: build, (maybe) calibrate, sample, write artifacts."""
    t0 = time.perf_counter()
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    target, meta = build_target(cfg)
    kin = KineticEnergy(cfg.beta)
    sampler = get_sampler(cfg.sampler, cfg.fruts_n_limit)
    dt = time_step_for(cfg.d, cfg.alpha, cfg.beta, cfg.h)

    calibration = None
    n_t = cfg.n_t
    if n_t == 0:
        try:
            n_t, calibration = coupling.calibrate_block_length(
                target, sampler, kin, dt, cfg.w, cfg.seed,
                runs=cfg.calibrate_runs, cap=cfg.calibrate_cap)
        except CalibrationError as exc:
            (out_dir / "calibration.json").write_text(
                json.dumps({"error": str(exc), "config": asdict(cfg)}, indent=2))
            print(f"calibration failed: {exc}")
            return 3
        calibration["sampler"] = cfg.sampler
        (out_dir / "calibration.json").write_text(json.dumps(calibration, indent=2))

    samples, error, agg = run_sets_parallel(cfg, dt, n_t)
    certified = samples.shape[0]
    rep = metrics_mod.report(agg, {"n_t": n_t}, certified, error)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": asdict(cfg),
        "target_label": target.label,
        "dt": dt,
        "n_t": n_t,
        "meta": meta,
        "metrics": rep,
        "diagnostics": {
            # the n_b points of a set are thinned by the block length but
            # not fully independent; reported, not asserted
            "within_set_lag1_autocorr": _within_set_autocorr(samples, cfg.n_b),
        },
        "runtime_seconds": time.perf_counter() - t0,
    }
    if calibration is not None:
        report["calibration"] = calibration
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))

    if error:
        print("coalescence failure: output not certified; no samples written")
        return 2

    original = samples if target.to_original is None else target.to_original(samples)
    write_samples_csv(out_dir / "samples.csv", original, cfg)
    if cfg.target == "lasso":
        X, y, _ = targets_mod.load_diabetes(_resolve_dataset(cfg))
        emit_histogram(original, "T", cfg.bins, out_dir / "hist_T.csv", cfg, (X, y))
        emit_histogram(original, "S", cfg.bins, out_dir / "hist_S.csv", cfg, (X, y))
    else:
        emit_histogram(original, "1", cfg.bins, out_dir / "hist_q1.csv", cfg)
    print(f"certified points: {certified}; "
          f"du/point: {rep['du_per_perfect_point']:.1f}; "
          f"max blocks to coalesce: {rep['max_blocks_to_coalesce']}")
    return 0


def run_calibrate(cfg: RunConfig) -> int:
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    target, _ = build_target(cfg)
    kin = KineticEnergy(cfg.beta)
    sampler = get_sampler(cfg.sampler, cfg.fruts_n_limit)
    dt = time_step_for(cfg.d, cfg.alpha, cfg.beta, cfg.h)
    try:
        n_t, record = coupling.calibrate_block_length(
            target, sampler, kin, dt, cfg.w, cfg.seed,
            runs=cfg.calibrate_runs, cap=cfg.calibrate_cap)
    except CalibrationError as exc:
        (out_dir / "calibration.json").write_text(
            json.dumps({"error": str(exc), "config": asdict(cfg)}, indent=2))
        print(f"calibration failed: {exc}")
        return 3
    record["sampler"] = cfg.sampler
    record["config"] = asdict(cfg)
    (out_dir / "calibration.json").write_text(json.dumps(record, indent=2))
    print(f"calibrated block length n_T = {n_t}")
    return 0


def run_hist(args) -> int:
    with open(args.samples) as fh:
        header_lines = 0
        for line in fh:
            if line.startswith("#"):
                header_lines += 1
            else:
                break
    samples = np.loadtxt(args.samples, delimiter=",", skiprows=header_lines + 1)
    if samples.ndim == 1:
        samples = samples[:, None]
    lasso_context = None
    cfg = None
    if args.config:
        cfg = make_config(parse_config_file(args.config))
        if cfg.target == "lasso":
            X, y, _ = targets_mod.load_diabetes(_resolve_dataset(cfg))
            lasso_context = (X, y)
    out = Path(args.out) / f"hist_{args.var}.csv"
    emit_histogram(samples, args.var, args.bins, out, cfg, lasso_context)
    print(f"wrote {out}")
    return 0


def _load_cfg(args) -> RunConfig:
    values = parse_config_file(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        values[key.strip()] = val.strip()
    if args.seed is not None:
        values["seed"] = args.seed
    if args.workers is not None:
        values["workers"] = args.workers
    if args.out is not None:
        values["out"] = args.out
    return make_config(values)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="perfhmc",
                                     description="Perfect simulation with coupled HMC")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--workers", type=int, default=None, help="worker processes")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field (repeatable)")

    common(sub.add_parser("run", help="run a perfect-sampling experiment"))
    common(sub.add_parser("calibrate", help="calibrate the block length (90%% coalescence rule)"))
    hist_p = sub.add_parser("hist", help="histogram a samples.csv column or T/S")
    hist_p.add_argument("--samples", required=True, help="samples.csv path")
    hist_p.add_argument("--var", required=True, help="coordinate index (1-based), T or S")
    hist_p.add_argument("--bins", type=int, default=60)
    hist_p.add_argument("--config", help="run config (needed for T/S)")
    hist_p.add_argument("--out", default=".", help="output directory")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return run_experiment(_load_cfg(args))
        if args.command == "calibrate":
            return run_calibrate(_load_cfg(args))
        if args.command == "hist":
            return run_hist(args)
    except ConfigError as exc:
        print(f"config error: {exc}")
        return 1
    except PerfHmcError as exc:
        print(f"error: {exc}")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
