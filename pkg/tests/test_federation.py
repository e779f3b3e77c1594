import math

import numpy as np
import pytest

from oracles import oracle_state_trace, oracle_topsis
from trustfed.config import ATSSSF_ADAPTIVE, ATSSSF_STATIC, FEDAVG, parse_config
from trustfed.dataset import ClientShard
from trustfed.federation import (
    FederatedEngine,
    Strategy,
    build_engine,
    fedavg_aggregate,
    prepare_data,
    run_experiment,
)
from trustfed.model import LayerLayout, ModelParams, init_model
from trustfed.participation import OMITTED
from trustfed.smoothing import STATIC, SmootherState


def small_cfg(**extra):
    base = {"dataset.n_per_class": "60", "rounds": "6", "clients": "5", "model.hidden": "16,8,8"}
    base.update({k: str(v) for k, v in extra.items()})
    return parse_config(overrides=base)


def vec(*values):
    layout = LayerLayout(1, (1, 1, 1), 2, 0.0)
    out = np.zeros(layout.n_params)
    out[: len(values)] = values
    return ModelParams(out, layout)


def test_aggregate_examples():
    one = vec(1.5, -2.0)
    assert np.array_equal(fedavg_aggregate({7: one}, {7: 12}).vector, one.vector)
    got = fedavg_aggregate({0: vec(0.0), 1: vec(4.0)}, {0: 1, 1: 3})
    assert got.vector[0] == 3.0
    with pytest.raises(ValueError):
        fedavg_aggregate({}, {})


def test_aggregate_equal_sizes_is_plain_mean():
    rng = np.random.default_rng(0)
    layout = LayerLayout(2, (3, 3, 3), 2, 0.0)
    ups = {i: ModelParams(rng.normal(size=layout.n_params), layout) for i in range(6)}
    got = fedavg_aggregate(ups, {i: 40 for i in ups})
    assert np.allclose(got.vector, np.mean([u.vector for u in ups.values()], axis=0), atol=1e-12)


def test_aggregate_weights_sum_to_one():
    rng = np.random.default_rng(1)
    layout = LayerLayout(1, (1, 1, 1), 2, 0.0)
    ones = {i: ModelParams(np.ones(layout.n_params), layout) for i in range(5)}
    for _ in range(20):
        sizes = {i: int(rng.integers(1, 500)) for i in ones}
        assert np.allclose(fedavg_aggregate(ones, sizes).vector, 1.0, atol=1e-12)


def test_strategy_validation():
    with pytest.raises(ValueError):
        Strategy("krum")
    with pytest.raises(ValueError):
        Strategy(ATSSSF_ADAPTIVE, smoother=SmootherState(mode=STATIC))


@pytest.fixture(scope="module")
def small_data():
    cfg = small_cfg(**{"adversaries.count": 1})
    return cfg, prepare_data(cfg)


def test_fedavg_logs_markers_and_full_cohort(small_data):
    cfg, data = small_data
    res = run_experiment(cfg, FEDAVG, data)
    assert len(res.logs) == cfg.rounds
    for e in res.logs:
        assert math.isnan(e.alpha) and math.isnan(e.mean_trust) and math.isnan(e.trust_variance)
        assert e.active_count == cfg.n_clients and not e.omitted_now
        assert not math.isnan(e.sigma2)


def test_round_trace_matches_oracles(small_data):
    cfg, data = small_data
    engine = build_engine(cfg.with_overrides({"trust.max_omissions": "1"}), data, ATSSSF_STATIC)
    prev = {cid: 1.0 for cid in engine.shards}
    smoothed_traj = {cid: [] for cid in engine.shards}
    entries = []
    for _ in range(4):
        entry = engine.run_round()
        entries.append(entry)
        for rec in entry.clients:
            expected = 0.7 * prev[rec.client_id] + 0.3 * rec.raw_trust
            assert rec.smoothed_trust == pytest.approx(expected, abs=1e-12)
            prev[rec.client_id] = rec.smoothed_trust
            smoothed_traj[rec.client_id].append(rec.smoothed_trust)
    trace = oracle_state_trace(smoothed_traj, cfg.tau, 1)
    assert any(e.omitted_now for e in entries)
    for entry, (omitted, readmitted, active) in zip(entries, trace):
        assert (set(entry.omitted_now), set(entry.readmitted_now)) == (omitted, readmitted)
        assert entry.active_count == len(active)


def test_raw_trust_is_topsis_of_validation_metrics(small_data):
    cfg, data = small_data
    engine = build_engine(cfg, data, ATSSSF_ADAPTIVE)
    entry = engine.run_round()
    # recompute round-1 client metrics with the same rng substreams
    replay = build_engine(cfg, data, ATSSSF_ADAPTIVE)
    replay.round = 1
    rows = [replay._client_task(cid)[1].as_row() for cid in sorted(replay.shards)]
    expected = oracle_topsis(rows, [0.25] * 4)
    assert [rec.raw_trust for rec in entry.clients] == pytest.approx(expected, abs=1e-9)
    assert entry.sigma2 == pytest.approx(float(np.var(expected)), abs=1e-12)


def test_determinism_and_parallel_equivalence(small_data):
    cfg, data = small_data
    a = run_experiment(cfg, ATSSSF_ADAPTIVE, data)
    b = run_experiment(cfg, ATSSSF_ADAPTIVE, data)
    c = run_experiment(cfg.with_overrides({"federation.workers": "4"}), ATSSSF_ADAPTIVE, data)
    assert [e.row() for e in a.logs] == [e.row() for e in b.logs]
    assert [e.row() for e in a.logs] == [e.row() for e in c.logs]
    assert np.array_equal(a.final_params.vector, c.final_params.vector)


def test_cohort_conservation(small_data):
    cfg, data = small_data
    engine = build_engine(cfg.with_overrides({"trust.max_omissions": "1"}), data, ATSSSF_ADAPTIVE)
    for _ in range(4):
        e = engine.run_round()
        n_omitted = sum(1 for rec in e.clients if rec.status == OMITTED)
        assert n_omitted + e.active_count == cfg.n_clients
        assert n_omitted == engine.n_omitted()


def test_zero_threshold_matches_fedavg_bit_for_bit(small_data):
    cfg, data = small_data
    base = run_experiment(cfg, FEDAVG, data)
    for kind in (ATSSSF_STATIC, ATSSSF_ADAPTIVE):
        # tau must be positive in configs, so the engine is driven directly
        engine = build_engine(cfg, data, kind)
        engine.strategy = Strategy(kind, 0.0, cfg.m, engine.strategy.weights, engine.strategy.smoother)
        for _ in range(cfg.rounds):
            engine.run_round()
        assert np.array_equal(engine.global_params.vector, base.final_params.vector)


def test_identical_honest_shards_first_round():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(40, 4))
    y = np.arange(40) % 7
    shards = [ClientShard(i, x, y, x[:14], y[:14]) for i in range(5)]
    layout = LayerLayout(4, (8, 8, 8), 7, 0.2)
    strategy = Strategy(ATSSSF_STATIC, smoother=SmootherState(alpha=0.3, mode=STATIC))
    engine = FederatedEngine(shards, x, y, init_model(layout, 0), strategy, seed=1)
    e = engine.run_round()
    smoothed = {rec.client_id: [rec.smoothed_trust] for rec in e.clients}
    assert all(v[0] >= 0.7 - 1e-12 for v in smoothed.values())
    expected = oracle_state_trace(smoothed, 0.75, 3)[0]
    assert (set(e.omitted_now), set(e.readmitted_now)) == expected[:2]


def test_empty_active_set_is_reported(small_data):
    cfg, data = small_data
    engine = build_engine(cfg.with_overrides({"trust.tau": "0.99", "trust.max_omissions": "5"}), data, ATSSSF_STATIC)
    with pytest.raises(ValueError, match="every client is omitted"):
        for _ in range(cfg.rounds):
            engine.run_round()


def test_sample_fraction_selects_subset():
    cfg = small_cfg(**{"federation.sample_fraction": 0.4, "clients": 5})
    engine = build_engine(cfg, prepare_data(cfg), ATSSSF_ADAPTIVE)
    e = engine.run_round()
    assert sum(not math.isnan(rec.raw_trust) for rec in e.clients) == 2


def test_zero_rounds_reports_initial_model():
    cfg = small_cfg(rounds=0)
    res = run_experiment(cfg)
    assert res.logs == []
    assert res.report["final_metrics"] == res.report["initial_metrics"]


def test_paper_scale_echo():
    cfg = parse_config(overrides={"paper_scale": "true"})
    echo = cfg.to_dict()
    assert echo["clients"] == 100 and echo["rounds"] == 500
    assert echo["train.lr"] == 0.001 and echo["train.batch_size"] == 16
    assert echo["smoother.alpha"] == 0.3 and echo["trust.tau"] == 0.75 and echo["trust.max_omissions"] == 3


def test_strategies_share_dataset_hash(small_data):
    cfg, data = small_data
    hashes = {run_experiment(cfg.with_overrides({"rounds": "1"}), k, data).report["dataset_hash"] for k in
              (FEDAVG, ATSSSF_STATIC, ATSSSF_ADAPTIVE)}
    assert len(hashes) == 1


@pytest.mark.parametrize("seed", range(3))
def test_fedavg_accuracy_trend_is_non_decreasing(seed):
    cfg = parse_config(overrides={"seed": str(seed), "rounds": "40", "dataset.n_per_class": "150"})
    res = run_experiment(cfg, FEDAVG)
    acc = np.array([e.test.accuracy for e in res.logs])
    smooth = np.convolve(acc, np.ones(10) / 10, mode="valid")
    # a window average may wobble by a fraction of one test sample once the model has converged
    assert np.all(np.diff(smooth) >= -0.01)
    assert smooth[-1] > smooth[0]
