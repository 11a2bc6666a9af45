import json

import numpy as np
import pytest

from scenarios import regime_shift_scenario
from windcorrect.continual import (
    STRATEGIES, FinetuneConfig, bootstrap_se, default_frozen_layers, finetune, finetune_forecaster,
    run_strategies, strategy_table, write_strategy_table,
)
from windcorrect.datagen import BiasProfile
from windcorrect.errors import ConfigError, InputError, UnsupportedKindError
from windcorrect.evaluation import compute_metrics
from windcorrect.ingest import fit_normalizer
from windcorrect.models import (
    Forecaster, cnn_spec, forecast, lstm_spec, model_inputs, model_targets, nn_spec, train_forecaster,
)
from windcorrect.nnet import TrainConfig
from windcorrect.powercurve import true_power
from windcorrect.sampler import stack_samples

QUICK = TrainConfig(max_epochs=2, early_stopping_patience=2)


@pytest.fixture(scope="module")
def shifted():
    """Regime-shift data and an NN trained on the pre-shift period."""
    sc = regime_shift_scenario()
    train, val, _ = sc.old
    norm = fit_normalizer(stack_samples(train)[0], sc.dataset.truth_curve.capacity_kw)
    return sc, train_forecaster("nn", train, val, norm)


def _pairs(model, samples):
    x, y = stack_samples(samples)
    return model_inputs(model.kind, x, model.normalizer), model_targets(model.kind, y, model.normalizer)


def _test_rmse(model, samples):
    x, y = stack_samples(samples)
    return compute_metrics(forecast(model, x), y, model.normalizer.capacity_kw).rmse


def test_default_frozen_layers():
    assert default_frozen_layers(nn_spec()) == (0, 1, 2)
    assert default_frozen_layers(cnn_spec()) == (0, 1, 2, 3, 4)
    assert default_frozen_layers(lstm_spec()) == (0, 1, 2, 3)
    for spec in (nn_spec(), cnn_spec(), lstm_spec()):
        trainable = set(range(len(spec.layers))) - set(default_frozen_layers(spec))
        weight = [i for i in trainable if spec.layers[i].kind in ("dense", "conv1d", "bilstm")]
        assert len(weight) == 2


def test_finetune_config_validation():
    FinetuneConfig(lr_scale=1.0)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ConfigError):
            FinetuneConfig(lr_scale=bad)
    with pytest.raises(ConfigError):
        FinetuneConfig(patience=0)


def test_all_layers_frozen_returns_identical_model(shifted):
    sc, original = shifted
    m = original.artifact
    tuned = finetune(m, _pairs(original, sc.new[0]), _pairs(original, sc.new[1]),
                     FinetuneConfig(frozen_layers=tuple(range(len(m.spec.layers)))))
    assert tuned is not m
    np.testing.assert_array_equal(tuned.params, m.params)
    np.testing.assert_array_equal(tuned.state, m.state)


def test_vanishing_learning_rate_barely_moves_params(shifted):
    sc, original = shifted
    m = original.artifact
    tuned = finetune(m, _pairs(original, sc.new[0]), _pairs(original, sc.new[1]),
                     FinetuneConfig(lr_scale=1e-12, max_epochs=5, patience=5))
    assert np.max(np.abs(tuned.params - m.params)) < 1e-6


def test_frozen_segments_bit_identical(shifted):
    sc, original = shifted
    m = original.artifact
    tuned = finetune(m, _pairs(original, sc.new[0]), _pairs(original, sc.new[1]),
                     FinetuneConfig(max_epochs=3, patience=3))
    frozen = set(default_frozen_layers(m.spec))
    net = m.network
    for seg in net.param_segments:
        same = np.array_equal(tuned.params[seg.start:seg.stop], m.params[seg.start:seg.stop])
        assert same == (seg.layer in frozen), seg.name
    for seg in net.state_segments:
        if seg.layer in frozen:
            np.testing.assert_array_equal(tuned.state[seg.start:seg.stop], m.state[seg.start:seg.stop])


def test_output_layer_finetune_beats_original(shifted):
    sc, original = shifted
    n = len(original.artifact.spec.layers)
    tuned = finetune_forecaster(original, sc.new[0], sc.new[1], FinetuneConfig(frozen_layers=tuple(range(n - 1))))
    assert tuned.normalizer_digest == original.normalizer_digest
    assert _test_rmse(tuned, sc.new[2]) < _test_rmse(original, sc.new[2])


def test_finetune_errors(shifted, small_samples):
    sc, original = shifted
    norm = original.normalizer
    gb = train_forecaster("gb", small_samples[0][:5], small_samples[1][:5], norm)
    with pytest.raises(UnsupportedKindError):
        finetune_forecaster(gb, sc.new[0], sc.new[1])
    with pytest.raises(UnsupportedKindError):
        finetune(gb.artifact, _pairs(original, sc.new[0]), _pairs(original, sc.new[1]))
    with pytest.raises(UnsupportedKindError):
        run_strategies(gb, sc.new[0], sc.new[1], sc.new[2], sc.dataset.truth_curve)
    with pytest.raises(InputError):
        finetune_forecaster(original, [], sc.new[1])
    empty = (np.zeros((0, 10)), np.zeros((0, 1)))
    with pytest.raises(InputError):
        finetune(original.artifact, empty, _pairs(original, sc.new[1]))


@pytest.fixture(scope="module")
def quick_reports(shifted):
    sc, original = shifted
    cfg = FinetuneConfig(max_epochs=2, patience=2)
    a = run_strategies(original, sc.new[0], sc.new[1], sc.new[2], sc.dataset.truth_curve, cfg, QUICK)
    b = run_strategies(original, sc.new[0][::-1][:40], sc.new[1], sc.new[2], sc.dataset.truth_curve, cfg, QUICK)
    return a, b


def test_strategy_one_ignores_new_training_data(quick_reports):
    a, b = quick_reports
    np.testing.assert_array_equal(a.reports["original"].rmse_k, b.reports["original"].rmse_k)
    np.testing.assert_array_equal(a.reports["original"].mb_k, b.reports["original"].mb_k)
    assert a.reports["retrain"].rmse != b.reports["retrain"].rmse


def test_baseline_row_identical_and_data_independent(shifted, quick_reports):
    sc, _ = shifted
    a, b = quick_reports
    df = strategy_table([a])
    base = df[df.model == "baseline"].drop(columns="strategy")
    assert len(base) == len(STRATEGIES)
    assert (base.nunique() == 1).all()
    np.testing.assert_array_equal(a.baseline.rmse_k, b.baseline.rmse_k)
    x, y = stack_samples(sc.new[2])
    direct = compute_metrics(true_power(x[..., 0], sc.dataset.truth_curve), y, a.baseline.capacity_kw)
    np.testing.assert_array_equal(a.baseline.rmse_k, direct.rmse_k)


def test_strategy_metadata(shifted, quick_reports):
    _, original = shifted
    a, _ = quick_reports
    assert a.metadata["frozen_layers"] == [0, 1, 2]
    assert a.metadata["lr_scale"] == 0.1
    assert a.metadata["original_normalizer_digest"] == original.normalizer_digest
    assert a.metadata["retrain_normalizer_digest"] != original.normalizer_digest
    assert a.models["continual"].normalizer_digest == original.normalizer_digest
    assert a.metadata["k_test"] == a.reports["original"].k == a.baseline.k


def test_write_strategy_table(tmp_path, quick_reports):
    a, _ = quick_reports
    write_strategy_table([a], tmp_path)
    text = (tmp_path / "strategies.csv").read_text()
    assert text.splitlines()[0] == "strategy,model,k,mb,mae,rmse,nrmse"
    assert len(text.splitlines()) == 1 + 2 * len(STRATEGIES)
    payload = json.loads((tmp_path / "strategies.json").read_text())
    assert {(r["strategy"], r["model"]) for r in payload["rows"]} == {
        (s, m) for s in STRATEGIES for m in ("nn", "baseline")}
    assert payload["metadata"]["nn"]["frozen_layers"] == [0, 1, 2]


def test_bootstrap_se():
    a = np.arange(10.0)
    assert bootstrap_se(a, a) == 0.0
    rng = np.random.default_rng(3)
    x = rng.normal(size=400)
    # standard error of a mean of 400 unit-variance draws is 0.05
    assert bootstrap_se(x, np.zeros(400), n_boot=4000) == pytest.approx(0.05, rel=0.1)
    # independent resampling of two such arrays adds the variances
    assert bootstrap_se(x, x, n_boot=4000, paired=False) == pytest.approx(0.05 * np.sqrt(2), rel=0.1)


def test_no_shift_continual_matches_original():
    # new data: an independent realisation of the same generator over the same calendar window
    same = BiasProfile(diurnal_amplitude_ms=2.0, seasonal_amplitude_ms=0.5, noise_std_ms=0.8)
    old = regime_shift_scenario(seed=21, new_bias=same, old_bias=same).old
    new = regime_shift_scenario(seed=23, new_bias=same, old_bias=same).old
    norm = fit_normalizer(stack_samples(old[0])[0], 2100.0)
    original = train_forecaster("nn", old[0], old[1], norm)
    tuned = finetune_forecaster(original, new[0], new[1])
    x, y = stack_samples(new[2])
    r1 = compute_metrics(forecast(original, x), y, norm.capacity_kw).rmse_k
    r3 = compute_metrics(forecast(tuned, x), y, norm.capacity_kw).rmse_k
    # test-set noise of each estimate; the paired error is smaller than seed-to-seed training noise
    assert abs(r1.mean() - r3.mean()) < 2 * bootstrap_se(r1, r3, paired=False)
