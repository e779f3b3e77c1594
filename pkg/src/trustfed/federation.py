"""Round engine: local training, trust scoring, filtering and aggregation."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from trustfed import dataset as ds
from trustfed.config import ATSSSF_ADAPTIVE, ATSSSF_STATIC, FEDAVG, ExperimentConfig
from trustfed.metrics import MetricVector, confusion_csv, evaluate_confusion, macro_metrics
from trustfed.model import LayerLayout, ModelParams, init_model, train_local
from trustfed.participation import OMITTED, decide_round, register_clients
from trustfed.smoothing import (
    ADAPTIVE,
    STATIC,
    SmootherState,
    adapt_alpha,
    ema_update,
    initial_trust,
    trust_variance,
)
from trustfed.topsis import EQUAL_WEIGHTS, DecisionMatrix, check_weights, topsis_scores

log = logging.getLogger(__name__)

ROUND_LOG_COLUMNS = (
    "round",
    "strategy",
    "alpha",
    "sigma2",
    "mean_trust",
    "trust_variance",
    "omitted_count",
    "readmitted_count",
    "active_count",
    "test_accuracy",
    "test_macro_precision",
    "test_macro_recall",
    "test_macro_f1",
)
CLIENT_LOG_COLUMNS = ("round", "client_id", "raw_trust", "smoothed_trust", "status", "behavior")


@dataclass(frozen=True)
class Strategy:
    kind: str = ATSSSF_ADAPTIVE
    tau: float = 0.75
    m: int = 3
    weights: tuple = EQUAL_WEIGHTS
    smoother: SmootherState = field(default_factory=SmootherState)

    def __post_init__(self):
        if self.kind not in (FEDAVG, ATSSSF_STATIC, ATSSSF_ADAPTIVE):
            raise ValueError(f"unknown strategy {self.kind!r}")
        check_weights(self.weights)
        want = {ATSSSF_STATIC: STATIC, ATSSSF_ADAPTIVE: ADAPTIVE}.get(self.kind)
        if want and self.smoother.mode != want:
            raise ValueError(f"{self.kind} needs a {want} smoother")

    @property
    def filters(self) -> bool:
        return self.kind != FEDAVG

    @classmethod
    def from_config(cls, cfg: ExperimentConfig, kind: str | None = None) -> "Strategy":
        kind = kind or cfg.strategy
        mode = STATIC if kind == ATSSSF_STATIC else ADAPTIVE
        smoother = SmootherState(
            alpha=cfg.alpha_init,
            mode=mode,
            variance_threshold=cfg.variance_threshold,
            alpha_floor=min(cfg.alpha_floor, cfg.alpha_init),
        )
        return cls(kind, cfg.tau, cfg.m, tuple(cfg.weights), smoother)


@dataclass(frozen=True)
class ClientRecord:
    client_id: int
    raw_trust: float
    smoothed_trust: float
    status: str
    behavior: str


@dataclass(frozen=True)
class RoundLog:
    round: int
    strategy: str
    alpha: float
    sigma2: float
    mean_trust: float
    trust_variance: float
    omitted_now: tuple
    readmitted_now: tuple
    active_count: int
    test: MetricVector
    clients: tuple = ()

    def row(self) -> list:
        return [
            self.round,
            self.strategy,
            self.alpha,
            self.sigma2,
            self.mean_trust,
            self.trust_variance,
            len(self.omitted_now),
            len(self.readmitted_now),
            self.active_count,
            *self.test.as_row(),
        ]


def fedavg_aggregate(updates: dict, sizes: dict) -> ModelParams:
    """Sample-weighted mean of client parameter vectors (weights renormalized)."""
    if not updates:
        raise ValueError("no client updates to aggregate")
    ids = sorted(updates)
    layout = updates[ids[0]].layout
    stack = np.stack([updates[i].vector for i in ids])
    if stack.shape[1] != layout.n_params:
        raise ValueError("client parameter vectors differ in length")
    n = np.array([float(sizes[i]) for i in ids])
    if np.any(n < 0) or n.sum() <= 0:
        raise ValueError("client sample counts must be non-negative with a positive total")
    return ModelParams((n / n.sum()) @ stack, layout)


def client_rng(seed: int, rnd: int, client_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, rnd, client_id])


class FederatedEngine:
    """Holds global model, shards and trust state; one call to :meth:`run_round` per round."""

    def __init__(
        self,
        shards: list,
        test_x: np.ndarray,
        test_y: np.ndarray,
        global_params: ModelParams,
        strategy: Strategy,
        *,
        seed: int = 0,
        lr: float = 0.001,
        batch_size: int = 16,
        local_epochs: int = 1,
        sample_fraction: float = 1.0,
        workers: int = 1,
    ):
        self.shards = {s.client_id: s for s in shards}
        self.test_x = test_x
        self.test_y = test_y
        self.global_params = global_params
        self.strategy = strategy
        self.seed = seed
        self.lr = lr
        self.batch_size = batch_size
        self.local_epochs = local_epochs
        self.sample_fraction = sample_fraction
        self.workers = workers
        self.round = 0
        self.statuses = register_clients(sorted(self.shards))
        self.smoothed = initial_trust(sorted(self.shards))
        self.smoother = strategy.smoother

    def select_clients(self) -> list:
        ids = sorted(self.shards)
        if self.sample_fraction >= 1.0:
            return ids
        k = max(1, int(math.ceil(self.sample_fraction * len(ids))))
        rng = np.random.default_rng([self.seed, 0, self.round])
        return sorted(int(i) for i in rng.choice(ids, size=k, replace=False))

    def _client_task(self, cid: int):
        shard = self.shards[cid]
        rng = client_rng(self.seed, self.round, cid)
        params = train_local(
            self.global_params,
            shard.train_x,
            shard.train_y,
            self.local_epochs,
            rng,
            batch_size=self.batch_size,
            lr=self.lr,
        )
        if shard.behavior.kind == ds.NOISY_UPDATE:
            params.vector += rng.normal(0.0, shard.behavior.param, params.vector.shape)
        metrics = macro_metrics(evaluate_confusion(params, shard.val_x, shard.val_y))
        return params, metrics

    def _train_all(self, selected: list):
        if self.workers > 1 and len(selected) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(self._client_task, selected))
        else:
            results = [self._client_task(cid) for cid in selected]
        # results come back in `selected` order regardless of scheduling
        return dict(zip(selected, results))

    def run_round(self) -> RoundLog:
        self.round += 1
        selected = self.select_clients()
        results = self._train_all(selected)
        updates = {cid: r[0] for cid, r in results.items()}
        metrics = {cid: r[1] for cid, r in results.items()}

        raw = topsis_scores(DecisionMatrix.from_metrics(metrics), self.strategy.weights)
        sigma2 = trust_variance(raw)
        omitted_now: frozenset = frozenset()
        readmitted_now: frozenset = frozenset()
        if self.strategy.filters:
            self.smoother = adapt_alpha(self.smoother, sigma2)
            self.smoothed = ema_update(self.smoothed, raw, self.smoother.alpha)
            subset = {cid: self.statuses[cid] for cid in selected}
            decision, changed = decide_round(subset, self.smoothed, self.strategy.tau, self.strategy.m)
            self.statuses.update(changed)
            omitted_now, readmitted_now = decision.omitted_now, decision.readmitted_now
            active = sorted(decision.active_set)
            values = np.fromiter(self.smoothed.values(), dtype=float)
            alpha, mean_trust, var_trust = self.smoother.alpha, float(values.mean()), float(values.var())
        else:
            active = selected
            alpha = mean_trust = var_trust = float("nan")

        if not active:
            raise ValueError(
                f"round {self.round}: every client is omitted, nothing to aggregate "
                f"(lower trust.tau or trust.max_omissions)"
            )
        self.global_params = fedavg_aggregate(
            {cid: updates[cid] for cid in active},
            {cid: self.shards[cid].n_samples for cid in active},
        )
        test = macro_metrics(evaluate_confusion(self.global_params, self.test_x, self.test_y))

        records = tuple(
            ClientRecord(
                cid,
                raw.get(cid, float("nan")),
                self.smoothed[cid] if self.strategy.filters else float("nan"),
                self.statuses[cid].status,
                str(self.shards[cid].behavior),
            )
            for cid in sorted(self.shards)
        )
        entry = RoundLog(
            self.round,
            self.strategy.kind,
            alpha,
            sigma2,
            mean_trust,
            var_trust,
            tuple(sorted(omitted_now)),
            tuple(sorted(readmitted_now)),
            len(active),
            test,
            records,
        )
        log.debug(
            "round %d %s acc=%.4f f1=%.4f active=%d omitted=%s",
            self.round, self.strategy.kind, test.accuracy, test.macro_f1, len(active), entry.omitted_now,
        )
        return entry

    def n_omitted(self) -> int:
        return sum(1 for s in self.statuses.values() if s.status == OMITTED)


@dataclass
class PreparedData:
    raw: ds.SpectralData
    shards: list
    test_x: np.ndarray
    test_y: np.ndarray
    adversary_ids: tuple
    digest: str


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    """Generate (or load) the dataset, scale it, and build client shards with behaviors."""
    if cfg.dataset_path:
        raw = ds.import_csv(cfg.dataset_path)
    else:
        raw = ds.generate_dataset(
            cfg.n_per_class, cfg.bins, np.random.default_rng([cfg.seed, 2]), cfg.noise, cfg.spread
        )
    rng = np.random.default_rng([cfg.seed, 3])
    train_idx, test_idx = ds.stratified_split(raw.labels, cfg.test_fraction, rng)
    features = ds.derive_features(raw.s11, raw.s21)
    means, stds = ds.fit_standardizer(features[train_idx])
    x = ds.apply_standardizer(features, means, stds)
    shards = ds.partition(x[train_idx], raw.labels[train_idx], cfg.n_clients, cfg.concentration, rng)

    adversaries = tuple(sorted(int(i) for i in rng.choice(cfg.n_clients, cfg.adversaries, replace=False)))
    param = cfg.flip_fraction if cfg.adversary_behavior == ds.LABEL_FLIP else cfg.noise_sigma
    prepared = []
    for shard in shards:
        if cfg.smote and len(shard.train_y):
            tx, ty = ds.smote(shard.train_x, shard.train_y, cfg.smote_k, rng)
            shard = ds.ClientShard(
                shard.client_id, tx, ty, shard.val_x, shard.val_y, n_samples=len(shard.train_y)
            )
        if shard.client_id in adversaries:
            shard.behavior = ds.Behavior(cfg.adversary_behavior, param)
            shard = ds.corrupt_shard(shard, rng)
        prepared.append(shard)
    return PreparedData(raw, prepared, x[test_idx], raw.labels[test_idx], adversaries, raw.digest())


def layout_for(cfg: ExperimentConfig, input_dim: int) -> LayerLayout:
    return LayerLayout(input_dim, tuple(cfg.hidden), ds.N_STAGES, cfg.dropout)


def build_engine(cfg: ExperimentConfig, data: PreparedData, kind: str | None = None) -> FederatedEngine:
    layout = layout_for(cfg, data.test_x.shape[1])
    return FederatedEngine(
        data.shards,
        data.test_x,
        data.test_y,
        init_model(layout, [cfg.seed, 4]),
        Strategy.from_config(cfg, kind),
        seed=cfg.seed,
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        local_epochs=cfg.local_epochs,
        sample_fraction=cfg.sample_fraction,
        workers=cfg.workers,
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    strategy: str
    logs: list
    report: dict
    final_params: ModelParams


def metric_dict(mv: MetricVector) -> dict:
    return {
        "accuracy": mv.accuracy,
        "macro_precision": mv.macro_precision,
        "macro_recall": mv.macro_recall,
        "macro_f1": mv.macro_f1,
    }


def summarize(logs: list, final: MetricVector) -> dict:
    trust = [e.mean_trust for e in logs if not math.isnan(e.mean_trust)]
    return {
        "final_accuracy": final.accuracy,
        "final_macro_f1": final.macro_f1,
        "mean_trust": float(np.mean(trust)) if trust else None,
        "final_mean_trust": trust[-1] if trust else None,
        "total_omissions": int(sum(len(e.omitted_now) for e in logs)),
        "total_readmissions": int(sum(len(e.readmitted_now) for e in logs)),
        "mean_active": float(np.mean([e.active_count for e in logs])) if logs else None,
    }


def run_experiment(
    cfg: ExperimentConfig, kind: str | None = None, data: PreparedData | None = None
) -> ExperimentResult:
    """Run ``cfg.rounds`` rounds of one strategy; ``data`` lets strategies share a dataset."""
    cfg.validate()
    data = data or prepare_data(cfg)
    engine = build_engine(cfg, data, kind)
    initial_cm = evaluate_confusion(engine.global_params, data.test_x, data.test_y)
    logs = [engine.run_round() for _ in range(cfg.rounds)]
    final_cm = evaluate_confusion(engine.global_params, data.test_x, data.test_y)
    final = macro_metrics(final_cm)
    report = {
        "config": cfg.to_dict() | {"strategy": engine.strategy.kind},
        "dataset_hash": data.digest,
        "strategy": engine.strategy.kind,
        "adversary_ids": list(data.adversary_ids),
        "initial_metrics": metric_dict(macro_metrics(initial_cm)),
        "final_metrics": metric_dict(final),
        "final_confusion_matrix": final_cm.tolist(),
        "final_confusion_csv": confusion_csv(final_cm),
        "summary": summarize(logs, final),
    }
    return ExperimentResult(cfg, engine.strategy.kind, logs, report, engine.global_params)
