"""The five forecasters behind one interface, plus random hyperparameter search.

Kinds: ``baseline`` (power curve on the hub-height NWP wind), ``gb`` and
``nn`` (single-timepoint models applied to each of the 49 rows), ``cnn`` and
``lstm`` (whole-sample models with 49 outputs).  Every forecaster maps a
batch of raw ``(K, 49, 10)`` samples to ``(K, 49)`` kW.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, IntegrityError, SearchError, TrainingError, UnsupportedKindError
from .evaluation import compute_metrics
from .gbdt import GbConfig, GbEnsemble, fit_gb, load_ensemble, predict_gb, save_ensemble
from .ingest import N_FEATURES, Normalizer, apply_normalizer, denormalize_power, normalize_power
from .nnet import (
    ModelSpec, TrainConfig, TrainedModel, batchnorm, bilstm, conv1d, dense, dropout, flatten, forward,
    load_model, save_model, train,
)
from .powercurve import PowerCurve, true_power
from .sampler import HORIZON, ForecastSample, stack_samples

log = logging.getLogger(__name__)

KINDS = ("baseline", "gb", "nn", "cnn", "lstm")
NEURAL_KINDS = ("nn", "cnn", "lstm")
ROWWISE_KINDS = ("gb", "nn")


def nn_spec(units1=64, units2=64, dropout_rate=0.5, learning_rate=0.003) -> ModelSpec:
    return ModelSpec(
        input_shape=(N_FEATURES,),
        layers=(
            dense(units1, "relu"), batchnorm(), dropout(dropout_rate),
            dense(units2, "relu"), batchnorm(), dropout(dropout_rate),
            dense(1),
        ),
        learning_rate=learning_rate,
    )


def cnn_spec(filters1=40, filters2=64, kernel_width=5, stride=2, dense_units=96, dropout_rate=0.5,
             learning_rate=0.0005) -> ModelSpec:
    return ModelSpec(
        input_shape=(HORIZON, N_FEATURES),
        layers=(
            conv1d(filters1, kernel_width, stride, "relu"), batchnorm(),
            conv1d(filters2, kernel_width, stride, "relu"), batchnorm(),
            flatten(),
            dense(dense_units, "relu"), batchnorm(), dropout(dropout_rate),
            dense(HORIZON),
        ),
        learning_rate=learning_rate,
    )


def lstm_spec(lstm_units=96, dense1=16, dense2=32, dropout_rate=0.5, learning_rate=0.001) -> ModelSpec:
    return ModelSpec(
        input_shape=(HORIZON, N_FEATURES),
        layers=(
            bilstm(lstm_units),
            dense(dense1, "relu"), batchnorm(), dropout(dropout_rate),
            dense(dense2, "relu"), batchnorm(), dropout(dropout_rate),
            dense(HORIZON),
        ),
        learning_rate=learning_rate,
    )


_BUILDERS = {"nn": nn_spec, "cnn": cnn_spec, "lstm": lstm_spec}
_HYPER_NAMES = {
    "nn": ("units1", "units2", "dropout_rate", "learning_rate"),
    "cnn": ("filters1", "filters2", "kernel_width", "stride", "dense_units", "dropout_rate", "learning_rate"),
    "lstm": ("lstm_units", "dense1", "dense2", "dropout_rate", "learning_rate"),
    "gb": ("n_stages", "learning_rate", "max_depth"),
}


def default_config(kind: str):
    """Shipped defaults: the tabulated architectures and GB settings."""
    if kind == "gb":
        return GbConfig()
    if kind in _BUILDERS:
        return _BUILDERS[kind]()
    raise UnsupportedKindError(f"no trainable configuration for kind {kind!r}")


# Whole-sample kinds see 49x fewer training rows than row-wise ones, so they
# get smaller batches to keep the number of updates per epoch reasonable.
DEFAULT_BATCH_SIZE = {"nn": 64, "cnn": 16, "lstm": 16}


def default_train_config(kind: str, seed: int = 0) -> TrainConfig:
    return TrainConfig(batch_size=DEFAULT_BATCH_SIZE.get(kind, 64), rng_seed=seed)


def build_config(kind: str, params: dict):
    """Model spec (or GbConfig) from named hyperparameters; missing ones keep their defaults."""
    if kind not in _HYPER_NAMES:
        raise UnsupportedKindError(f"no trainable configuration for kind {kind!r}")
    unknown = set(params) - set(_HYPER_NAMES[kind])
    if unknown:
        raise ConfigError(f"unknown {kind} hyperparameters: {sorted(unknown)}")
    if kind == "gb":
        return GbConfig(**params)
    return _BUILDERS[kind](**params)


# -- forecaster ------------------------------------------------------------


@dataclass
class Forecaster:
    kind: str
    artifact: object  # PowerCurve | GbEnsemble | TrainedModel
    normalizer: Normalizer | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedKindError(f"unknown kind {self.kind!r}")
        if self.kind != "baseline" and self.normalizer is None:
            raise ConfigError(f"{self.kind} forecaster needs a normalizer")

    @property
    def normalizer_digest(self) -> str | None:
        return self.normalizer.digest() if self.normalizer is not None else None


def _as_batch(samples) -> tuple[np.ndarray, bool]:
    if isinstance(samples, ForecastSample):
        return samples.features[None], True
    if isinstance(samples, (list, tuple)) and samples and isinstance(samples[0], ForecastSample):
        return stack_samples(samples)[0], False
    x = np.asarray(samples, dtype=float)
    if x.ndim == 2:
        return x[None], True
    return x, False


def baseline_forecast(sample, curve: PowerCurve) -> np.ndarray:
    """Power curve applied to the hub-height NWP wind (feature 0, m/s)."""
    x, single = _as_batch(sample)
    out = true_power(x[..., 0], curve)
    return out[0] if single else out


def model_inputs(kind: str, x: np.ndarray, normalizer: Normalizer) -> np.ndarray:
    z = apply_normalizer(normalizer, x)
    return z.reshape(-1, N_FEATURES) if kind in ROWWISE_KINDS else z


def model_targets(kind: str, y: np.ndarray, normalizer: Normalizer) -> np.ndarray:
    t = normalize_power(normalizer, y)
    return t.reshape(-1, 1) if kind == "nn" else t.reshape(-1) if kind == "gb" else t


def forecast(model: Forecaster, samples, normalizer: Normalizer | None = None) -> np.ndarray:
    """49 kW values per sample.

    Passing the ``normalizer`` the data was prepared with checks it against
    the one the model was trained with.
    """
    x, single = _as_batch(samples)
    if x.ndim != 3 or x.shape[1:] != (HORIZON, N_FEATURES):
        raise InputError(f"expected samples of shape (K, {HORIZON}, {N_FEATURES}), got {x.shape}")
    if model.kind == "baseline":
        out = true_power(x[..., 0], model.artifact)
    else:
        if normalizer is not None and normalizer.digest() != model.normalizer_digest:
            raise IntegrityError("normalizer does not match the one the model was trained with")
        z = model_inputs(model.kind, x, model.normalizer)
        if model.kind == "gb":
            y = predict_gb(model.artifact, z)
        else:
            y = forward(model.artifact, z)
        out = denormalize_power(model.normalizer, np.asarray(y).reshape(len(x), HORIZON))
    return out[0] if single else out


def train_forecaster(
    kind: str,
    train_samples,
    val_samples,
    normalizer: Normalizer,
    config=None,
    train_cfg: TrainConfig | None = None,
    curve: PowerCurve | None = None,
) -> Forecaster:
    """Fit one kind on raw samples.  ``baseline`` only wraps ``curve``."""
    if kind == "baseline":
        if curve is None:
            raise ConfigError("baseline needs a power curve")
        return Forecaster("baseline", curve, normalizer)
    config = config if config is not None else default_config(kind)
    xt, yt = stack_samples(train_samples)
    if len(xt) == 0:
        raise InputError("empty training set")
    if kind == "gb":
        ens = fit_gb(model_inputs(kind, xt, normalizer), model_targets(kind, yt, normalizer), config)
        return Forecaster("gb", ens, normalizer)
    xv, yv = stack_samples(val_samples)
    train_cfg = train_cfg or default_train_config(kind)
    trained = train(
        config,
        (model_inputs(kind, xt, normalizer), model_targets(kind, yt, normalizer)),
        (model_inputs(kind, xv, normalizer), model_targets(kind, yv, normalizer)),
        train_cfg,
    )
    return Forecaster(kind, trained, normalizer)


def save_forecaster(model: Forecaster, out_dir, extra: dict | None = None) -> None:
    """``forecaster.json`` plus the kind's artifact file(s)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": 1,
        "kind": model.kind,
        "normalizer": model.normalizer.to_dict() if model.normalizer is not None else None,
        "normalizer_digest": model.normalizer_digest,
    }
    if model.kind == "baseline":
        meta["curve"] = model.artifact.to_dict()
    elif model.kind == "gb":
        save_ensemble(model.artifact, out / "ensemble.json")
    else:
        save_model(model.artifact, out)
    if extra:
        meta.update(extra)
    (out / "forecaster.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_forecaster(model_dir) -> Forecaster:
    d = Path(model_dir)
    meta = json.loads((d / "forecaster.json").read_text())
    norm = Normalizer.from_dict(meta["normalizer"]) if meta.get("normalizer") else None
    if norm is not None and norm.digest() != meta.get("normalizer_digest"):
        raise IntegrityError(f"{d}: stored normalizer does not match its digest")
    kind = meta["kind"]
    if kind == "baseline":
        artifact = PowerCurve.from_dict(meta["curve"])
    elif kind == "gb":
        artifact = load_ensemble(d / "ensemble.json")
    else:
        artifact = load_model(d)[0]
    return Forecaster(kind, artifact, norm)


# -- random search ---------------------------------------------------------

_DISTRIBUTIONS = ("choice", "uniform", "loguniform", "int")


@dataclass
class SearchSpace:
    """Per-hyperparameter distributions, e.g. ``{"units1": {"choice": [16, 32]}}``.

    ``uniform``/``loguniform`` take ``[low, high]``; ``int`` takes an
    inclusive ``[low, high]``.
    """

    params: dict[str, dict]

    def __post_init__(self):
        if not self.params:
            raise ConfigError("search space is empty")
        for name, dist in self.params.items():
            if len(dist) != 1 or next(iter(dist)) not in _DISTRIBUTIONS:
                raise ConfigError(f"{name}: expected exactly one of {_DISTRIBUTIONS}")
            (k, v), = dist.items()
            if k == "choice":
                if not v:
                    raise ConfigError(f"{name}: empty choice list")
            else:
                lo, hi = v
                if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                    raise ConfigError(f"{name}: invalid range {v}")
                if k == "loguniform" and lo <= 0:
                    raise ConfigError(f"{name}: loguniform needs a positive range")

    def sample(self, rng: np.random.Generator) -> dict:
        out = {}
        for name in sorted(self.params):
            (k, v), = self.params[name].items()
            if k == "choice":
                val = v[int(rng.integers(len(v)))]
            elif k == "uniform":
                val = float(rng.uniform(v[0], v[1]))
            elif k == "loguniform":
                val = float(math.exp(rng.uniform(math.log(v[0]), math.log(v[1]))))
            else:
                val = int(rng.integers(v[0], v[1] + 1))
            out[name] = val.item() if isinstance(val, np.generic) else val
        return out

    def to_dict(self) -> dict:
        return {"params": self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        return cls(dict(d.get("params", d)))


_WIDTHS = [16, 32, 48, 64, 96, 128]
_LR = {"loguniform": [1e-4, 1e-2]}
_DROP = {"uniform": [0.0, 0.6]}
DEFAULT_SPACES = {
    "nn": {"units1": {"choice": _WIDTHS}, "units2": {"choice": _WIDTHS}, "dropout_rate": _DROP,
           "learning_rate": _LR},
    "cnn": {"filters1": {"choice": [16, 24, 32, 40, 48, 64]}, "filters2": {"choice": [32, 48, 64, 96, 128]},
            "kernel_width": {"choice": [3, 5, 7]}, "stride": {"choice": [1, 2]},
            "dense_units": {"choice": [32, 64, 96, 128]}, "dropout_rate": _DROP, "learning_rate": _LR},
    "lstm": {"lstm_units": {"choice": [32, 48, 64, 96, 128]}, "dense1": {"choice": [8, 16, 32, 64]},
             "dense2": {"choice": [16, 32, 64]}, "dropout_rate": _DROP, "learning_rate": _LR},
    "gb": {"n_stages": {"int": [50, 300]}, "learning_rate": {"loguniform": [0.01, 0.3]},
           "max_depth": {"int": [2, 8]}},
}


def default_space(kind: str) -> SearchSpace:
    if kind not in DEFAULT_SPACES:
        raise UnsupportedKindError(f"nothing to search for kind {kind!r}")
    return SearchSpace(json.loads(json.dumps(DEFAULT_SPACES[kind])))


def config_hash(kind: str, params: dict) -> str:
    blob = json.dumps({"kind": kind, "params": params}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Trial:
    index: int
    params: dict
    config_hash: str
    val_rmse: float
    epochs: int
    status: str = "ok"  # ok | diverged


@dataclass
class SearchResult:
    kind: str
    best_index: int
    best_params: dict
    best_config: object
    trials: list[Trial] = field(default_factory=list)

    @property
    def best_rmse(self) -> float:
        return self.trials[self.best_index].val_rmse


def _trial_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def run_trial(kind, index, params, train_samples, val_samples, normalizer, seed, train_cfg) -> Trial:
    cfg = build_config(kind, params)
    tc = replace(train_cfg or default_train_config(kind), rng_seed=_trial_seed(seed, index))
    h = config_hash(kind, params)
    try:
        model = train_forecaster(kind, train_samples, val_samples, normalizer, cfg, tc)
        preds = forecast(model, val_samples)
        rmse = compute_metrics(preds, stack_samples(val_samples)[1], normalizer.capacity_kw).rmse
    except (TrainingError, FloatingPointError) as exc:
        log.info("trial %d diverged: %s", index, exc)
        return Trial(index, params, h, math.inf, getattr(exc, "epoch", 0) or 0, "diverged")
    epochs = len(model.artifact.history) if kind in NEURAL_KINDS else cfg.n_stages
    if not math.isfinite(rmse):
        return Trial(index, params, h, math.inf, epochs, "diverged")
    return Trial(index, params, h, rmse, epochs)


def random_search(
    kind: str,
    space: SearchSpace,
    train_samples,
    val_samples,
    normalizer: Normalizer,
    n_configs: int = 200,
    seed: int = 0,
    train_cfg: TrainConfig | None = None,
) -> SearchResult:
    """Sample ``n_configs`` configurations, train each and keep the lowest validation RMSE.

    Ties go to the earliest trial.  Raises SearchError (carrying the log)
    when every trial diverged.
    """
    if n_configs < 1:
        raise ConfigError("n_configs must be >= 1")
    rng = np.random.default_rng(seed)
    drawn = [space.sample(rng) for _ in range(n_configs)]
    trials = [run_trial(kind, i, p, train_samples, val_samples, normalizer, seed, train_cfg)
              for i, p in enumerate(drawn)]
    scores = np.array([t.val_rmse for t in trials])
    if not np.isfinite(scores).any():
        raise SearchError("all search trials diverged", trials=trials)
    best = int(np.argmin(scores))
    return SearchResult(kind, best, trials[best].params, build_config(kind, trials[best].params), trials)


def write_trial_log(result: SearchResult, path) -> None:
    lines = ["trial,config_hash,val_rmse,epochs,status,params"]
    for t in result.trials:
        params = json.dumps(t.params, sort_keys=True).replace('"', '""')
        lines.append(f'{t.index},{t.config_hash},{t.val_rmse!r},{t.epochs},{t.status},"{params}"')
    Path(path).write_text("\n".join(lines) + "\n")
