"""Model update strategies when new data arrives.

* ``original``: keep the trained model as it is.
* ``retrain``: train the same architecture from scratch on the new data,
  with a normalizer refit on the new training set.
* ``continual``: start from the original weights, freeze most layers and
  fine-tune the rest on the new data at a reduced learning rate, keeping
  the original normalizer.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, InputError, UnsupportedKindError
from .evaluation import MetricsReport, compute_metrics
from .ingest import fit_normalizer
from .models import (
    NEURAL_KINDS, Forecaster, default_train_config, forecast, model_inputs, model_targets, train_forecaster,
)
from .nnet import ModelSpec, TrainConfig, TrainedModel, train
from .powercurve import PowerCurve
from .sampler import stack_samples

log = logging.getLogger(__name__)

STRATEGIES = ("original", "retrain", "continual")
WEIGHT_LAYERS = ("dense", "conv1d", "bilstm")


@dataclass(frozen=True)
class FinetuneConfig:
    frozen_layers: tuple[int, ...] | None = None  # None: default_frozen_layers(spec)
    lr_scale: float = 0.1
    max_epochs: int = 500
    patience: int = 15
    batch_size: int | None = None  # None: the kind's training default
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_scale <= 1:
            raise ConfigError("lr_scale must lie in (0, 1]")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("max_epochs and patience must be >= 1")


def default_frozen_layers(spec: ModelSpec) -> tuple[int, ...]:
    """Every layer below the second-to-last weight layer (last hidden + output stay trainable)."""
    weights = [i for i, l in enumerate(spec.layers) if l.kind in WEIGHT_LAYERS]
    if len(weights) < 2:
        return ()
    return tuple(range(weights[-2]))


def resolve_frozen(spec: ModelSpec, cfg: FinetuneConfig) -> tuple[int, ...]:
    frozen = default_frozen_layers(spec) if cfg.frozen_layers is None else tuple(sorted(set(cfg.frozen_layers)))
    bad = [i for i in frozen if not 0 <= i < len(spec.layers)]
    if bad:
        raise ConfigError(f"frozen layer indices out of range: {bad}")
    return frozen


def finetune(model: TrainedModel, new_train, new_val, cfg: FinetuneConfig | None = None) -> TrainedModel:
    """Continue training ``model`` on ``(inputs, targets)`` pairs with frozen layers.

    Frozen parameters and the running statistics of frozen batch-norm layers
    stay bit-identical.
    """
    cfg = cfg or FinetuneConfig()
    if not isinstance(model, TrainedModel):
        raise UnsupportedKindError("fine-tuning applies to neural models only")
    if len(new_train[0]) == 0 or len(new_val[0]) == 0:
        raise InputError("new training and validation data must be non-empty")
    frozen = resolve_frozen(model.spec, cfg)
    if set(frozen) >= set(range(len(model.spec.layers))):
        return model.copy()
    tc = TrainConfig(
        batch_size=cfg.batch_size or 64,
        max_epochs=cfg.max_epochs,
        early_stopping_patience=cfg.patience,
        learning_rate=model.spec.learning_rate * cfg.lr_scale,
        rng_seed=cfg.rng_seed,
    )
    log.info("fine-tuning with frozen layers %s at lr x %g", list(frozen), cfg.lr_scale)
    return train(model.spec, new_train, new_val, tc, init=model, frozen_layers=frozen)


def finetune_forecaster(original: Forecaster, train_samples, val_samples, cfg: FinetuneConfig | None = None) -> Forecaster:
    """Fine-tune on raw samples, reusing the original normalizer."""
    if original.kind not in NEURAL_KINDS:
        raise UnsupportedKindError(f"fine-tuning is not applicable to kind {original.kind!r}")
    cfg = cfg or FinetuneConfig()
    if cfg.batch_size is None:
        cfg = replace(cfg, batch_size=default_train_config(original.kind).batch_size)
    norm, kind = original.normalizer, original.kind
    xt, yt = stack_samples(train_samples)
    xv, yv = stack_samples(val_samples)
    if len(xt) == 0 or len(xv) == 0:
        raise InputError("new training and validation data must be non-empty")
    tuned = finetune(
        original.artifact,
        (model_inputs(kind, xt, norm), model_targets(kind, yt, norm)),
        (model_inputs(kind, xv, norm), model_targets(kind, yv, norm)),
        cfg,
    )
    return Forecaster(kind, tuned, norm)


@dataclass
class StrategyReport:
    kind: str
    reports: dict[str, MetricsReport]
    baseline: MetricsReport
    metadata: dict = field(default_factory=dict)
    models: dict[str, Forecaster] = field(default_factory=dict, repr=False)

    def rmse(self, strategy: str) -> float:
        return self.reports[strategy].rmse


def run_strategies(
    original: Forecaster,
    new_train,
    new_val,
    new_test,
    curve: PowerCurve,
    cfg: FinetuneConfig | None = None,
    train_cfg: TrainConfig | None = None,
) -> StrategyReport:
    """Evaluate the three strategies and the power-curve baseline on ``new_test``."""
    if original.kind not in NEURAL_KINDS:
        raise UnsupportedKindError(f"strategy comparison needs a neural model, got {original.kind!r}")
    cfg = cfg or FinetuneConfig()
    kind = original.kind
    x_test, y_test = stack_samples(new_test)
    if len(x_test) == 0:
        raise InputError("new test set is empty")
    cap = original.normalizer.capacity_kw

    # strategy 1 sees the test inputs only
    reports = {"original": compute_metrics(forecast(original, x_test), y_test, cap)}

    new_norm = fit_normalizer(stack_samples(new_train)[0], cap)
    tc = train_cfg or default_train_config(kind, cfg.rng_seed)
    retrained = train_forecaster(kind, new_train, new_val, new_norm, original.artifact.spec, tc)
    reports["retrain"] = compute_metrics(forecast(retrained, x_test), y_test, cap)

    tuned = finetune_forecaster(original, new_train, new_val, cfg)
    reports["continual"] = compute_metrics(forecast(tuned, x_test), y_test, cap)

    base = compute_metrics(forecast(Forecaster("baseline", curve), x_test), y_test, cap)
    meta = {
        "frozen_layers": list(resolve_frozen(original.artifact.spec, cfg)),
        "lr_scale": cfg.lr_scale,
        "retrain_normalizer_digest": new_norm.digest(),
        "original_normalizer_digest": original.normalizer_digest,
        "k_test": int(len(x_test)),
    }
    return StrategyReport(kind, reports, base, meta, {"original": original, "retrain": retrained, "continual": tuned})


def strategy_table(reports) -> pd.DataFrame:
    """Long table (strategy, model, k, mb, mae, rmse, nrmse) with a baseline row per strategy."""
    rows = []
    for rep in reports:
        for s in STRATEGIES:
            for model, m in ((rep.kind, rep.reports[s]), ("baseline", rep.baseline)):
                rows.append({"strategy": s, "model": model, "k": m.k, "mb": m.mb, "mae": m.mae,
                             "rmse": m.rmse, "nrmse": m.nrmse})
    return pd.DataFrame(rows).drop_duplicates(["strategy", "model"]).reset_index(drop=True)


def write_strategy_table(reports, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    df = strategy_table(reports)
    df.to_csv(out / "strategies.csv", index=False, float_format="%.6f", lineterminator="\n")
    payload = {
        "rows": json.loads(df.to_json(orient="records", double_precision=10)),
        "metadata": {r.kind: r.metadata for r in reports},
    }
    (out / "strategies.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def bootstrap_se(per_sample_a, per_sample_b, n_boot: int = 1000, seed: int = 0, paired: bool = True) -> float:
    """Bootstrap standard error of mean(a) - mean(b).

    ``paired`` resamples the same test samples for both arrays, which only
    measures test-set noise for two fixed models.  Unpaired resampling draws
    independent indices per array, giving the noise of each estimate.
    """
    a, b = np.asarray(per_sample_a, float), np.asarray(per_sample_b, float)
    rng = np.random.default_rng(seed)
    ia = rng.integers(0, len(a), size=(n_boot, len(a)))
    ib = ia if paired else rng.integers(0, len(b), size=(n_boot, len(b)))
    return float(np.std(a[ia].mean(axis=1) - b[ib].mean(axis=1), ddof=1))
