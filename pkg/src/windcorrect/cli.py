"""Command-line pipeline: generate, prepare, train, search, evaluate, finetune, compare-strategies.

Every command writes one ``manifest.json`` into its output directory.  Config
files are JSON; explicit flags take precedence over file values, which take
precedence over built-in defaults.  ``WINDCORRECT_DATA_DIR`` supplies default
input and output directories.

Exit codes: 0 ok, 2 config, 3 data, 4 missing artifact, 5 integrity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .continual import FinetuneConfig, finetune_forecaster, run_strategies, write_strategy_table
from .datagen import dataset_manifest, generate_farm, load_generate_config, write_dataset
from .errors import (
    ConfigError, FitError, InputError, IntegrityError, SearchError, SpecError, SplitError, TrainingError,
    UnsupportedKindError, WindCorrectError,
)
from .evaluation import bias_table, compare_models, compute_metrics, summarize_relative, summarize_turbines
from .ingest import Normalizer, fit_normalizer, read_nwp_csv, read_scada_csv
from .models import (
    KINDS, NEURAL_KINDS, Forecaster, SearchSpace, build_config, default_config, default_space,
    default_train_config, forecast, load_forecaster, random_search, save_forecaster, train_forecaster,
    write_trial_log,
)
from .powercurve import PowerCurve, default_curve
from .sampler import (
    FeatureContext, assign_days, build_samples, load_samples, partition, sample_times, save_samples, split_monthly,
    stack_samples,
)

log = logging.getLogger("windcorrect")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MISSING, EXIT_INTEGRITY = 0, 2, 3, 4, 5
DATA_DIR_ENV = "WINDCORRECT_DATA_DIR"
CONFIG_VERSION = 1
FLOAT_FMT = "%.6f"


class MissingArtifact(WindCorrectError):
    pass


# -- helpers ---------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _hash_inputs(*paths) -> dict:
    out = {}
    for p in paths:
        if p is None:
            continue
        p = Path(p)
        files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
        for f in files:
            if f.name != "manifest.json":
                out[str(f)] = _sha256(f)
    return out


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: expected a JSON object")
    version = cfg.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"{p}: unsupported config version {version}")
    return cfg


def _dir(arg, sub: str, must_exist: bool) -> Path:
    if arg is None:
        root = os.environ.get(DATA_DIR_ENV)
        if not root:
            raise ConfigError(f"no {sub} directory given and {DATA_DIR_ENV} is unset")
        arg = Path(root) / sub
    p = Path(arg)
    if must_exist and not p.is_dir():
        raise MissingArtifact(f"directory not found: {p}")
    return p


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing artifact: {path}")
    return path


def _prepare_out(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory is not writable: {out}")
    return out


def write_manifest(out: Path, args, config_path=None, inputs=(), seeds=None, extra=None) -> None:
    argv = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": args.command,
        "arguments": argv,
        "config_hash": _sha256(Path(config_path)) if config_path else None,
        "input_hashes": _hash_inputs(*inputs),
        "seeds": seeds or {"seed": getattr(args, "seed", None)},
        "toolkit_version": __version__,
        "created_utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
    }
    if extra:
        manifest.update(extra)
    outputs = sorted(f for f in out.rglob("*") if f.is_file() and f.name != "manifest.json")
    manifest["output_hashes"] = {str(f.relative_to(out)): _sha256(f) for f in outputs}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _to_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FMT, lineterminator="\n")


# -- generate --------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    farm, bias, curve, shift = load_generate_config(cfg)
    overrides = {}
    if args.turbines is not None:
        overrides["n_turbines"] = args.turbines
    if args.days is not None:
        overrides["duration_days"] = args.days
    if args.start is not None:
        overrides["start_time"] = args.start
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if overrides:
        farm = type(farm).from_dict({**farm.to_dict(), **overrides})
    out = _prepare_out(_dir(args.out, "raw", False))
    ds = generate_farm(farm, bias, curve, shift)
    write_dataset(ds, out)
    write_manifest(out, args, args.config, seeds={"rng_seed": farm.rng_seed}, extra={"dataset": dataset_manifest(ds)})
    print(f"wrote {len(ds.scada)} SCADA files and 1 NWP file to {out}")
    return EXIT_OK


# -- prepare ---------------------------------------------------------------


def _raw_context(raw: Path | None):
    """Feature context and power curve from a generated dataset's manifest, if any."""
    ctx, curve = FeatureContext(), None
    if raw is not None and (raw / "manifest.json").is_file():
        ds = json.loads((raw / "manifest.json").read_text()).get("dataset")
        if ds:
            f = ds["farm"]
            ctx = FeatureContext(f["hub_height_m"], f["nwp_ref_height_m"], f["utc_offset_hours"],
                                 f["nwp_interval_minutes"], f["scada_interval_minutes"])
            curve = PowerCurve.from_dict(ds["curve"])
    return ctx, curve


def cmd_prepare(args) -> int:
    cfg = _load_config(args.config)
    raw = Path(args.raw) if args.raw else None
    if args.scada:
        scada_files = [Path(p) for p in args.scada]
        nwp_file = Path(args.nwp) if args.nwp else None
    else:
        raw = raw or _dir(None, "raw", True)
        scada_files = sorted(raw.glob("scada_*.csv"))
        nwp_file = raw / "nwp.csv"
    if not scada_files or nwp_file is None:
        raise MissingArtifact("need SCADA files and an NWP file (or --raw DIR)")
    for p in [*scada_files, nwp_file]:
        _require(p)
    ctx, curve = _raw_context(raw)
    ctx_cfg = cfg.get("context", {})
    if ctx_cfg:
        ctx = replace(ctx, **ctx_cfg)
    for flag, name in (("hub_height", "hub_height_m"), ("nwp_height", "nwp_ref_height_m"),
                       ("utc_offset", "utc_offset_hours")):
        if getattr(args, flag) is not None:
            ctx = replace(ctx, **{name: getattr(args, flag)})
    if args.curve:
        curve = PowerCurve.from_dict(json.loads(_require(Path(args.curve)).read_text()))
    elif "curve" in cfg:
        curve = PowerCurve.from_dict(cfg["curve"])
    curve = curve or default_curve(capacity_kw=args.capacity or 2100.0)
    seed = args.seed if args.seed is not None else cfg.get("split_seed", 0)

    scada = pd.concat([read_scada_csv(p) for p in scada_files], ignore_index=True)
    nwp = read_nwp_csv(nwp_file)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        samples = build_samples(nwp, scada, ctx)
    if not samples:
        raise InputError("NWP and SCADA inputs do not overlap; no samples")
    by_turbine = {}
    for s in samples:
        by_turbine.setdefault(s.turbine_id, []).append(s)
    assignment = assign_days(sorted({s.day for s in samples}), seed)
    normalizers, counts = {}, {}
    for tid, ss in sorted(by_turbine.items()):
        split = split_monthly(ss, seed, assignment=assignment)
        normalizers[tid] = fit_normalizer(stack_samples(partition(ss, split, "train"))[0], curve.capacity_kw).to_dict()
        counts[tid] = {p: len(split.indices(p)) for p in ("train", "validation", "test")}
    out = _prepare_out(_dir(args.out, "prepared", False))
    save_samples(out, by_turbine, assignment)
    _write_json(out / "normalizers.json", normalizers)
    _write_json(out / "curve.json", curve.to_dict())
    _write_json(out / "context.json", {k: getattr(ctx, k) for k in ctx.__dataclass_fields__})
    write_manifest(out, args, args.config, inputs=[*scada_files, nwp_file], seeds={"split_seed": seed},
                   extra={"partition_counts": counts})
    for tid, c in counts.items():
        print(f"{tid}: {c['train']} train / {c['validation']} validation / {c['test']} test samples")
    return EXIT_OK


class Prepared:
    """Read-only view of a prepared directory."""

    def __init__(self, path: Path):
        self.path = path
        _require(path / "split.json")
        self.samples, self.assignment = load_samples(path)
        norms = json.loads(_require(path / "normalizers.json").read_text())
        self.normalizers = {tid: Normalizer.from_dict(d) for tid, d in norms.items()}
        self.curve = PowerCurve.from_dict(json.loads(_require(path / "curve.json").read_text()))
        ctx = json.loads((path / "context.json").read_text()) if (path / "context.json").exists() else {}
        self.context = FeatureContext(**ctx)

    def turbines(self, wanted=None) -> list[str]:
        tids = sorted(self.samples)
        if wanted:
            missing = sorted(set(wanted) - set(tids))
            if missing:
                raise InputError(f"turbines not in prepared data: {missing}")
            tids = [t for t in tids if t in wanted]
        return tids

    def part(self, tid: str, name: str):
        ss = self.samples[tid]
        return partition(ss, split_monthly(ss, 0, assignment=self.assignment), name)


# -- train -----------------------------------------------------------------


def _model_config(kind: str, cfg: dict, params_file):
    if kind == "baseline":
        return None
    params = dict(cfg.get("models", {}).get(kind, {}))
    if params_file:
        best = json.loads(_require(Path(params_file)).read_text())
        if best.get("kind") != kind:
            raise ConfigError(f"{params_file} holds {best.get('kind')!r} parameters, not {kind!r}")
        params.update(best["params"])
    return build_config(kind, params) if params else default_config(kind)


def _train_config(kind: str, cfg: dict, args):
    tc = default_train_config(kind, args.seed if args.seed is not None else cfg.get("seed", 0))
    over = {k: v for k, v in cfg.get("train", {}).items() if k in tc.__dataclass_fields__}
    for flag in ("batch_size", "max_epochs"):
        if getattr(args, flag, None) is not None:
            over[flag] = getattr(args, flag)
    if getattr(args, "patience", None) is not None:
        over["early_stopping_patience"] = args.patience
    return replace(tc, **over)


def _train_job(job):
    kind, tid, prepared_path, model_cfg, train_cfg, out_dir = job
    prep = Prepared(Path(prepared_path))
    f = train_forecaster(kind, prep.part(tid, "train"), prep.part(tid, "validation"), prep.normalizers[tid],
                         model_cfg, train_cfg, prep.curve)
    extra = {"turbine_id": tid}
    if kind == "baseline":
        extra["note"] = "power-curve reference; no training"
    save_forecaster(f, out_dir, extra)
    return tid, kind


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    prepared = _dir(args.prepared, "prepared", True)
    prep = Prepared(prepared)
    out = _prepare_out(_dir(args.out, "models", False))
    kinds = list(KINDS) if "all" in args.kind else args.kind
    jobs = []
    for kind in kinds:
        mc = _model_config(kind, cfg, args.params)
        tc = _train_config(kind, cfg, args)
        for tid in prep.turbines(args.turbines):
            jobs.append((kind, tid, str(prepared), mc, tc, str(out / tid / kind)))
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            done = list(pool.map(_train_job, jobs))
    else:
        done = [_train_job(j) for j in jobs]
    for tid, kind in done:
        print(f"trained {kind} for {tid}")
    write_manifest(out, args, args.config, inputs=[prepared], seeds={"seed": jobs[0][4].rng_seed if jobs else None})
    return EXIT_OK


# -- search ----------------------------------------------------------------


def cmd_search(args) -> int:
    cfg = _load_config(args.config)
    prep = Prepared(_dir(args.prepared, "prepared", True))
    tid = args.turbine or prep.turbines()[0]
    prep.turbines([tid])
    space = SearchSpace.from_dict(_load_config(args.space)) if args.space else default_space(args.kind)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    tc = _train_config(args.kind, cfg, args)
    try:
        result = random_search(args.kind, space, prep.part(tid, "train"), prep.part(tid, "validation"),
                               prep.normalizers[tid], args.n_configs, seed, tc)
    except SearchError as exc:
        out = _prepare_out(_dir(args.out, "search", False))
        pd.DataFrame([t.__dict__ for t in exc.trials]).to_csv(out / "trials.csv", index=False, lineterminator="\n")
        raise
    out = _prepare_out(_dir(args.out, "search", False))
    write_trial_log(result, out / "trials.csv")
    _write_json(out / "best.json", {"kind": args.kind, "turbine_id": tid, "trial": result.best_index,
                                    "val_rmse": result.best_rmse, "params": result.best_params})
    write_manifest(out, args, args.config, inputs=[prep.path] + ([Path(args.space)] if args.space else []),
                   seeds={"seed": seed})
    print(f"best {args.kind} trial {result.best_index}: val RMSE {result.best_rmse:.2f} kW")
    return EXIT_OK


# -- evaluate --------------------------------------------------------------


def _load_models(models: Path, tid: str, digest: str | None = None, kinds=None) -> dict[str, Forecaster]:
    """Forecasters under ``models/<tid>/<kind>``; with ``digest`` their normalizers must match it."""
    found = {}
    tdir = models / tid
    if not tdir.is_dir():
        raise MissingArtifact(f"no models for turbine {tid} under {models}")
    for kdir in sorted(p for p in tdir.iterdir() if p.is_dir()):
        if kinds and kdir.name not in kinds:
            continue
        _require(kdir / "forecaster.json")
        f = load_forecaster(kdir)
        if digest is not None and f.kind != "baseline" and f.normalizer_digest != digest:
            raise IntegrityError(f"{kdir}: model normalizer does not match the prepared data")
        found[f.kind] = f
    if kinds:
        missing = sorted(set(kinds) - set(found))
        if missing:
            raise MissingArtifact(f"turbine {tid}: missing models {missing}")
    return found


def cmd_evaluate(args) -> int:
    prep = Prepared(_dir(args.prepared, "prepared", True))
    models = _dir(args.models, "models", True)
    tids = prep.turbines(args.turbines)
    per_turbine, comparisons, metric_rows, bias_rows = {}, {}, [], {d: [] for d in ("month", "hour", "turbine_hour")}
    tz = prep.context.utc_offset_hours
    for tid in tids:
        test = prep.part(tid, args.partition)
        if not test:
            raise InputError(f"turbine {tid}: empty {args.partition} partition")
        x, y = stack_samples(test)
        times = sample_times(test)
        forecasters = _load_models(models, tid, prep.normalizers[tid].digest())
        forecasters.pop("baseline", None)
        preds = {"baseline": forecast(Forecaster("baseline", prep.curve), x)}
        for kind in KINDS[1:]:
            if kind in forecasters:
                preds[kind] = forecast(forecasters[kind], x, prep.normalizers[tid])
        reports = {k: compute_metrics(p, y, prep.curve.capacity_kw) for k, p in preds.items()}
        per_turbine[tid] = reports
        others = {k: r for k, r in reports.items() if k != "baseline"}
        if others:
            comparisons[tid] = compare_models(others, reports["baseline"])
        for k, r in reports.items():
            metric_rows.append({"turbine_id": tid, "model": k, **r.summary()})
        for k, p in preds.items():
            for dim in bias_rows:
                tids_arr = np.full(len(x), tid, dtype=object) if dim == "turbine_hour" else None
                t = bias_table(p, y, times, dim, tz, tids_arr)
                bias_rows[dim].append(t.rows.assign(model=k))
    out = _prepare_out(_dir(args.out, "evaluation", False))
    _to_csv(pd.DataFrame(metric_rows), out / "metrics_per_turbine.csv")
    summary = summarize_turbines(per_turbine)
    _to_csv(summary, out / "summary.csv")
    report = {"partition": args.partition, "turbines": tids,
              "summary": json.loads(summary.to_json(orient="records", double_precision=10)),
              "per_turbine": {t: {k: r.summary() for k, r in rs.items()} for t, rs in per_turbine.items()}}
    if comparisons:
        per = pd.concat([c.assign(turbine_id=t) for t, c in comparisons.items()], ignore_index=True)
        _to_csv(per[["turbine_id", *per.columns[:-1]]], out / "relative_per_turbine.csv")
        rel = summarize_relative(comparisons)
        _to_csv(rel, out / "relative.csv")
        report["relative"] = json.loads(rel.to_json(orient="records", double_precision=10))
    for dim, frames in bias_rows.items():
        df = pd.concat(frames, ignore_index=True)
        cols = ["model"] + [c for c in df.columns if c != "model"]
        _to_csv(df[cols], out / f"bias_by_{dim}.csv")
    _write_json(out / "report.json", report)
    write_manifest(out, args, None, inputs=[prep.path, models])
    print(summary.to_string(index=False))
    return EXIT_OK


# -- finetune / compare-strategies ------------------------------------------


def _finetune_config(cfg: dict, args) -> FinetuneConfig:
    fc = dict(cfg.get("finetune", {}))
    if "frozen_layers" in fc and fc["frozen_layers"] is not None:
        fc["frozen_layers"] = tuple(fc["frozen_layers"])
    if args.frozen_layers is not None:
        fc["frozen_layers"] = tuple(args.frozen_layers)
    for flag in ("lr_scale", "max_epochs", "patience", "batch_size"):
        if getattr(args, flag, None) is not None:
            fc[flag] = getattr(args, flag)
    if args.seed is not None:
        fc["rng_seed"] = args.seed
    try:
        return FinetuneConfig(**fc)
    except TypeError as exc:
        raise ConfigError(f"invalid finetune config: {exc}") from exc


def cmd_finetune(args) -> int:
    cfg = _load_config(args.config)
    model_dir = _dir(args.model, "models", True)
    original = load_forecaster(_require(model_dir / "forecaster.json").parent)
    if original.kind not in NEURAL_KINDS:
        raise UnsupportedKindError(f"fine-tuning is not applicable to kind {original.kind!r}")
    prep = Prepared(_dir(args.prepared, "prepared_new", True))
    tid = args.turbine or prep.turbines()[0]
    prep.turbines([tid])
    fc = _finetune_config(cfg, args)
    tuned = finetune_forecaster(original, prep.part(tid, "train"), prep.part(tid, "validation"), fc)
    out = _prepare_out(_dir(args.out, "finetuned", False))
    save_forecaster(tuned, out, {"turbine_id": tid, "finetune": {
        "frozen_layers": None if fc.frozen_layers is None else list(fc.frozen_layers),
        "lr_scale": fc.lr_scale, "note": "frozen layers and lr_scale are configurable defaults"}})
    write_manifest(out, args, args.config, inputs=[model_dir, prep.path])
    print(f"fine-tuned {original.kind} for {tid}")
    return EXIT_OK


def cmd_compare_strategies(args) -> int:
    cfg = _load_config(args.config)
    models = _dir(args.models, "models", True)
    prep = Prepared(_dir(args.prepared, "prepared_new", True))
    fc = _finetune_config(cfg, args)
    reports = []
    for tid in prep.turbines(args.turbines):
        # originals keep their own normalizer; the new data has a different one
        originals = _load_models(models, tid, kinds=args.kinds)
        for kind in args.kinds:
            tc = _train_config(kind, cfg, args)
            rep = run_strategies(originals[kind], prep.part(tid, "train"), prep.part(tid, "validation"),
                                 prep.part(tid, "test"), prep.curve, fc, tc)
            rep.metadata["turbine_id"] = tid
            reports.append(rep)
            print(f"{tid} {kind}: " + ", ".join(f"{s} {rep.rmse(s):.1f}" for s in rep.reports)
                  + f", baseline {rep.baseline.rmse:.1f} kW RMSE")
    out = _prepare_out(_dir(args.out, "strategies", False))
    write_strategy_table(reports, out)
    write_manifest(out, args, args.config, inputs=[models, prep.path])
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="windcorrect", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"windcorrect {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--config", help="JSON config file (flags override its values)")
        sp.add_argument("--seed", type=int, help="random seed")
        sp.add_argument("--out", help=f"output directory (default under ${DATA_DIR_ENV})")
        return sp

    g = cmd("generate", cmd_generate, "write a synthetic SCADA/NWP farm")
    g.add_argument("--turbines", type=int)
    g.add_argument("--days", type=int)
    g.add_argument("--start", help="UTC start time, e.g. 2021-01-01T00:00:00Z")

    pr = cmd("prepare", cmd_prepare, "build forecast samples, the monthly split and normalizers")
    pr.add_argument("--raw", help="directory with scada_*.csv and nwp.csv")
    pr.add_argument("--scada", nargs="+", help="SCADA CSV files")
    pr.add_argument("--nwp", help="NWP CSV file")
    pr.add_argument("--curve", help="power curve JSON")
    pr.add_argument("--capacity", type=float, help="capacity in kW for the default curve")
    pr.add_argument("--hub-height", type=float)
    pr.add_argument("--nwp-height", type=float)
    pr.add_argument("--utc-offset", type=float)

    def training_flags(sp):
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--max-epochs", type=int)
        sp.add_argument("--patience", type=int)

    t = cmd("train", cmd_train, "train forecasters per turbine")
    t.add_argument("--kind", nargs="+", required=True, choices=[*KINDS, "all"])
    t.add_argument("--prepared")
    t.add_argument("--params", help="best.json from a search run")
    t.add_argument("--turbines", nargs="+")
    t.add_argument("--parallel", type=int, default=1)
    training_flags(t)

    s = cmd("search", cmd_search, "random hyperparameter search on one turbine")
    s.add_argument("--kind", required=True, choices=KINDS[1:])
    s.add_argument("--prepared")
    s.add_argument("--space", help="JSON search space")
    s.add_argument("--turbine")
    s.add_argument("--n-configs", type=int, default=200)
    training_flags(s)

    e = cmd("evaluate", cmd_evaluate, "metric, comparison and bias tables")
    e.add_argument("--models")
    e.add_argument("--prepared")
    e.add_argument("--turbines", nargs="+")
    e.add_argument("--partition", default="test", choices=["train", "validation", "test"])

    def finetune_flags(sp):
        sp.add_argument("--frozen-layers", type=int, nargs="*")
        sp.add_argument("--lr-scale", type=float)

    f = cmd("finetune", cmd_finetune, "fine-tune one neural model on new data")
    f.add_argument("--model", help="a trained model directory (<models>/<turbine>/<kind>)")
    f.add_argument("--prepared", help="prepared directory of the new data")
    f.add_argument("--turbine")
    training_flags(f)
    finetune_flags(f)

    c = cmd("compare-strategies", cmd_compare_strategies, "original vs retrain vs continual learning")
    c.add_argument("--models")
    c.add_argument("--prepared", help="prepared directory of the new data")
    c.add_argument("--kinds", nargs="+", default=list(NEURAL_KINDS), choices=list(NEURAL_KINDS))
    c.add_argument("--turbines", nargs="+")
    training_flags(c)
    finetune_flags(c)
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, IntegrityError):
        return EXIT_INTEGRITY
    if isinstance(exc, (MissingArtifact, FileNotFoundError)):
        return EXIT_MISSING
    if isinstance(exc, (ConfigError, SpecError, UnsupportedKindError)):
        return EXIT_CONFIG
    if isinstance(exc, (InputError, SplitError, FitError, TrainingError, SearchError)):
        return EXIT_DATA
    return 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (WindCorrectError, FileNotFoundError) as exc:
        print(f"windcorrect {args.command}: error: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
