"""Trainer tests: config round trips, splits, determinism, abort, ablation."""
import numpy as np
import pytest

from msfin import scenarios as sc
from msfin.errors import ConfigError, DataError, NumericalAbortError
from msfin.losses import LossConfig
from msfin.model import MsFINConfig
from msfin.optim import OptimizerConfig
from msfin.train import (
    RunConfig,
    canonical_switch,
    predictions,
    run_ablation,
    stratified_split,
    train_run,
)


def tiny_model(**kw):
    defaults = dict(
        d_in=8, d=16, n_objects=3, heads=2, fps=5, t_max=20,
        layers_sam=1, layers_cam_pre=1, layers_ctm=1, layers_cam_post=1,
    )
    defaults.update(kw)
    return MsFINConfig(**defaults)


def run_config(**kw):
    defaults = dict(
        model=tiny_model(), loss=LossConfig(fps=5),
        optimizer=OptimizerConfig(lr=1e-3), batch_size=4, epochs=2, seed=0,
    )
    defaults.update(kw)
    return RunConfig(**defaults)


@pytest.fixture(scope="module")
def pool():
    base = sc.ScenarioSpec("benign", t_len=20, n_objects=3, d_in=8, fps=5, noise_sigma=0.3)
    return sc.generate_dataset(2, base, seed=11).records


@pytest.fixture(scope="module")
def short_run(pool):
    return train_run(run_config(), pool)


# -------------------------------------------------------------------- config


def test_run_config_json_round_trip():
    cfg = run_config(
        epochs=7, seed=3, disable=("long",), train_data="a.msfd",
        loss=LossConfig(fps=5, variant="focal_exponential", alpha=0.3, gamma=1.5),
    )
    again = RunConfig.from_json_dict(cfg.to_json_dict())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_run_config_accepts_echoed_hash_and_rejects_unknown_keys():
    raw = run_config().to_json_dict()
    raw["config_hash"] = "abcdef012345"  # harness echo, not a config field
    assert RunConfig.from_json_dict(raw) == run_config()
    raw["momentum"] = 0.9
    with pytest.raises(ConfigError):
        RunConfig.from_json_dict(raw)


def test_config_hash_tracks_content():
    a, b = run_config(seed=0), run_config(seed=1)
    assert a.config_hash() != b.config_hash()
    assert a.config_hash() == run_config(seed=0).config_hash()


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(batch_size=0),
        dict(epochs=-1),
        dict(val_fraction=0.0),
        dict(val_fraction=1.0),
        dict(warn_threshold=1.5),
        dict(temporal="lstm"),
        dict(disable=("short", "short")),
        dict(disable=("spin",)),
        dict(disable=("short", "mid", "long")),
        dict(loss=LossConfig(fps=20)),  # disagrees with model fps
    ],
)
def test_bad_run_configs_rejected(kwargs):
    with pytest.raises(ConfigError):
        run_config(**kwargs).validate()


def test_switch_aliases():
    assert canonical_switch("S") == "short"
    assert canonical_switch("M") == "mid"
    assert canonical_switch("L") == "long"
    assert canonical_switch("cam_post") == "cam_post"
    with pytest.raises(ConfigError):
        canonical_switch("xl")


def test_disable_shrinks_effective_model():
    eff = run_config(disable=("long", "sam")).effective_model()
    assert eff.scales == ("s", "m")
    assert not eff.use_sam and eff.use_cam_pre and eff.use_cam_post


# --------------------------------------------------------------------- split


def test_stratified_split_preserves_labels_and_members(pool):
    train, val = stratified_split(pool, 0.25, seed=5)
    assert len(train) + len(val) == len(pool)
    ids = {r.record_id for r in pool}
    assert {r.record_id for r in train} | {r.record_id for r in val} == ids
    for label in (0, 1):
        total = sum(r.label == label for r in pool)
        in_val = sum(r.label == label for r in val)
        assert in_val == round(0.25 * total)


def test_stratified_split_is_seeded(pool):
    a = stratified_split(pool, 0.2, seed=1)
    b = stratified_split(pool, 0.2, seed=1)
    assert [r.record_id for r in a[0]] == [r.record_id for r in b[0]]
    assert [r.record_id for r in a[1]] == [r.record_id for r in b[1]]


def test_stratified_split_never_empties_a_group():
    base = sc.ScenarioSpec("sudden", t_len=20, n_objects=3, d_in=8, fps=5, t_ao=15)
    two = [sc.generate_scenario(sc.ScenarioSpec(
        "sudden", t_len=20, n_objects=3, d_in=8, fps=5, t_ao=15, seed=s)) for s in (1, 2)]
    train, val = stratified_split(two, 0.5, seed=0)
    assert len(train) == 1 and len(val) == 1
    lone = [two[0]]
    train, val = stratified_split(lone, 0.5, seed=0)
    assert len(train) == 1 and not val


# ------------------------------------------------------------------ training


def test_training_runs_and_logs(short_run):
    log = short_run.log
    assert [r.epoch for r in log.rows] == [1, 2]
    assert all(np.isfinite(r.train_loss) for r in log.rows)
    assert all(0.0 <= r.val_ap <= 1.0 for r in log.rows)
    assert short_run.best_epoch in (1, 2)
    assert short_run.best_ap == max(r.val_ap for r in log.rows)


def test_training_is_deterministic(pool, short_run):
    again = train_run(run_config(), pool)
    assert again.log.trajectory() == short_run.log.trajectory()
    for (name, t), (name2, t2) in zip(
        again.best_params.named_tensors(), short_run.best_params.named_tensors()
    ):
        assert name == name2 and np.array_equal(t.data, t2.data)


def test_best_params_snapshot_matches_best_epoch(pool, short_run):
    preds = predictions(short_run.best_params, short_run.model_cfg, short_run.val_records)
    from msfin.metrics import average_precision

    assert average_precision(preds) == pytest.approx(short_run.best_ap, abs=1e-12)


def test_training_needs_both_labels(pool):
    with pytest.raises(DataError):
        train_run(run_config(), [])
    only_neg = [r for r in pool if r.label == 0]
    with pytest.raises(DataError):
        train_run(run_config(), only_neg)


def test_zero_lr_epoch_leaves_parameters_at_init(pool):
    from msfin.model import init_msfin_params

    cfg = run_config(optimizer=OptimizerConfig(lr=0.0), epochs=1)
    result = train_run(cfg, pool)
    fresh = init_msfin_params(
        cfg.effective_model(), np.random.default_rng(np.random.SeedSequence((cfg.seed, 10)))
    )
    for (name, t), (_, t0) in zip(result.params.named_tensors(), fresh.named_tensors()):
        assert np.array_equal(t.data, t0.data), name


def test_every_switch_combination_builds_and_runs(pool):
    from itertools import combinations

    from msfin.model import forward_probs, init_msfin_params
    from msfin.train import SWITCHES

    rec = pool[0]
    for r in range(len(SWITCHES) + 1):
        for combo in combinations(SWITCHES, r):
            cfg = run_config(disable=combo)
            if {"short", "mid", "long"} <= set(combo):
                with pytest.raises(ConfigError):
                    cfg.validate()
                continue
            eff = cfg.effective_model()
            params = init_msfin_params(eff, np.random.default_rng(0))
            probs = forward_probs(rec, params, eff)
            assert probs.shape == (rec.frame_features.shape[0],)
            assert np.all((probs.data >= 0.0) & (probs.data <= 1.0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
def test_divergent_run_aborts_with_diagnostics(pool):
    cfg = run_config(optimizer=OptimizerConfig(lr=1e8), epochs=8)
    with pytest.raises(NumericalAbortError) as exc:
        train_run(cfg, pool)
    err = exc.value
    assert err.epoch >= 1 and err.batch >= 0
    assert not np.isfinite(err.grad_norm)


# ------------------------------------------------------------------ ablation


def test_ablation_rows_cover_baseline_and_switches(pool):
    rows = run_ablation(run_config(epochs=1), ["L", "sam"], pool)
    assert [r.experiment for r in rows] == ["baseline", "no_long", "no_sam"]
    for row in rows:
        assert 0.0 <= row.ap <= 1.0
        assert row.mtta_seconds is None or row.mtta_seconds >= 0.0


def test_ablation_rejects_duplicate_switches(pool):
    with pytest.raises(ConfigError):
        run_ablation(run_config(epochs=1), ["L", "long"], pool)
