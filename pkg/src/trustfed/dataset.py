"""Synthetic spectral dataset, feature derivation, scaling, SMOTE and client shards.

The generator is a surrogate for S11/S21 sweeps over seven healing stages:
each stage has a resonance in S21 (and a matching dip in S11) whose centre
and height move monotonically with the stage index. Centres of the early
stages are packed closer together, so those stages overlap more.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

N_STAGES = 7
STAGE_NAMES = (
    "Fresh Fracture",
    "Soft Callus",
    "Early Mineralization",
    "Mid Healing",
    "Late Remodeling",
    "Near Healing",
    "Fully Healed",
)
RATIO_EPS = 1e-6

HONEST = "honest"
LABEL_FLIP = "label_flip"
NOISY_UPDATE = "noisy_update"
BEHAVIORS = (HONEST, LABEL_FLIP, NOISY_UPDATE)


@dataclass(frozen=True)
class SpectralData:
    """Raw sweeps: ``s11`` and ``s21`` are (n, F); ``labels`` is (n,)."""

    s11: np.ndarray
    s21: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.s11.shape != self.s21.shape or self.s11.ndim != 2:
            raise ValueError("s11 and s21 must be matching (n, F) arrays")
        if self.labels.shape != (self.s11.shape[0],):
            raise ValueError("one label per sample required")

    def __len__(self):
        return len(self.labels)

    @property
    def bins(self) -> int:
        return self.s11.shape[1]

    def subset(self, idx) -> "SpectralData":
        return SpectralData(self.s11[idx], self.s21[idx], self.labels[idx])

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr, dt in ((self.s11, "<f8"), (self.s21, "<f8"), (self.labels, "<i8")):
            h.update(np.ascontiguousarray(arr, dtype=dt).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class Behavior:
    kind: str = HONEST
    # flip fraction for label_flip, per-coordinate noise sigma for noisy_update
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in BEHAVIORS:
            raise ValueError(f"unknown behavior {self.kind!r}")
        if self.kind == LABEL_FLIP and not 0.0 <= self.param <= 1.0:
            raise ValueError("label_flip fraction must lie in [0, 1]")
        if self.kind == NOISY_UPDATE and self.param < 0:
            raise ValueError("noisy_update sigma must be >= 0")

    def __str__(self):
        return self.kind if self.kind == HONEST else f"{self.kind}({self.param:g})"


@dataclass
class ClientShard:
    client_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    behavior: Behavior = field(default_factory=Behavior)
    # local sample count before oversampling; used as the aggregation weight
    n_samples: int = 0

    def __post_init__(self):
        if not self.n_samples:
            self.n_samples = len(self.train_y)


def _stage_profile(bins: int):
    f = np.linspace(0.0, 1.0, bins)
    p = np.arange(N_STAGES) / (N_STAGES - 1)
    centre = 0.2 + 0.6 * p**1.4
    height = 0.4 + 0.5 * p
    width = 0.12 - 0.04 * p
    return f, centre, height, width


def generate_dataset(
    n_per_class: int,
    bins: int = 32,
    rng: np.random.Generator | None = None,
    noise: float = 0.05,
    spread: float = 0.04,
) -> SpectralData:
    """Balanced synthetic dataset, ``n_per_class`` sweeps for each stage.

    ``noise`` is the additive Gaussian sigma as a fraction of each curve's
    range; ``spread`` is the per-sample jitter of the resonance centre.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if bins < 2:
        raise ValueError("need at least 2 frequency bins")
    rng = np.random.default_rng() if rng is None else rng
    f, centre, height, width = _stage_profile(bins)
    labels = np.repeat(np.arange(N_STAGES), n_per_class)
    n = labels.size
    mu = centre[labels] + rng.normal(0.0, spread, n)
    amp = height[labels] * (1.0 + rng.normal(0.0, 0.1, n))
    wid = width[labels] * (1.0 + rng.normal(0.0, 0.1, n))
    offset = (f[None, :] - mu[:, None]) ** 2
    s21 = 0.15 + amp[:, None] * np.exp(-offset / (2.0 * wid[:, None] ** 2))
    s11 = 0.95 - 0.8 * amp[:, None] * np.exp(-offset / (2.0 * (1.2 * wid[:, None]) ** 2))
    for curve in (s21, s11):
        span = curve.max(axis=1) - curve.min(axis=1)
        curve += rng.normal(0.0, 1.0, curve.shape) * (noise * span)[:, None]
    return SpectralData(s11, s21, labels)


def derive_features(s11: np.ndarray, s21: np.ndarray) -> np.ndarray:
    """Feature block of width 6F-2 for one sweep (1-D) or a batch (2-D).

    Layout: s11, s21, s11-s21, s11/s21, diff(s11), diff(s21).
    """
    s11 = np.asarray(s11, dtype=float)
    s21 = np.asarray(s21, dtype=float)
    # guard scales with each sweep's own magnitude so batch and single-row results agree
    scale = np.max(np.abs(s21), axis=-1, keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    sign = np.where(s21 < 0, -1.0, 1.0)
    ratio = s11 / (s21 + RATIO_EPS * scale * sign)
    return np.concatenate(
        [s11, s21, s11 - s21, ratio, np.diff(s11, axis=-1), np.diff(s21, axis=-1)], axis=-1
    )


def fit_standardizer(train: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    train = np.asarray(train, dtype=float)
    if train.shape[0] == 0:
        raise ValueError("cannot fit a standardizer on an empty set")
    means = train.mean(axis=0)
    stds = train.std(axis=0)
    stds[stds == 0] = 1.0
    return means, stds


def apply_standardizer(x: np.ndarray, means: np.ndarray, stds: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=float) - means) / stds


def smote_with_parents(x, y, k: int = 5, rng=None):
    """SMOTE that also reports where each synthetic point came from.

    Returns ``(x_out, y_out, parents)``; the original samples come first and
    ``parents[j] = (base, neighbour)`` indexes into ``x`` for the j-th
    synthetic point. Single-sample classes are duplicated with 1e-6 jitter
    and get ``(base, -1)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng() if rng is None else rng
    classes, counts = np.unique(y, return_counts=True)
    if classes.size == 0:
        return x.copy(), y.copy(), np.zeros((0, 2), dtype=np.int64)
    target = counts.max()
    new_x, new_y, parents = [x], [y], []
    for cls, count in zip(classes, counts):
        need = target - count
        if need == 0:
            continue
        members = np.flatnonzero(y == cls)
        if count == 1:
            base = np.full(need, members[0])
            new_x.append(x[base] + rng.normal(0.0, 1e-6, (need, x.shape[1])))
            parents.append(np.column_stack([base, np.full(need, -1)]))
        else:
            kk = min(k, count - 1)
            pts = x[members]
            d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
            np.fill_diagonal(d2, np.inf)
            nn = np.argsort(d2, axis=1, kind="stable")[:, :kk]
            base_local = rng.integers(0, count, need)
            nn_local = nn[base_local, rng.integers(0, kk, need)]
            u = rng.random(need)[:, None]
            new_x.append(pts[base_local] + u * (pts[nn_local] - pts[base_local]))
            parents.append(np.column_stack([members[base_local], members[nn_local]]))
        new_y.append(np.full(need, cls, dtype=np.int64))
    parents_arr = np.concatenate(parents) if parents else np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(new_x), np.concatenate(new_y), parents_arr


def smote(x, y, k: int = 5, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Oversample every minority class up to the majority count."""
    x_out, y_out, _ = smote_with_parents(x, y, k, rng)
    return x_out, y_out


def _split_counts(total: int, proportions: np.ndarray) -> np.ndarray:
    cuts = np.round(np.cumsum(proportions) * total).astype(int)
    cuts[-1] = total
    return np.diff(np.concatenate([[0], cuts]))


def partition_indices(labels, n_clients: int, concentration: float | None, rng) -> list[np.ndarray]:
    """Index sets per client.

    ``concentration=None`` is the IID limit: each class is dealt round-robin,
    continuing from where the previous class stopped, so class histograms are
    within one sample of proportional and shard sizes differ by at most one.
    """
    labels = np.asarray(labels)
    n = labels.size
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    if n_clients > n:
        raise ValueError(f"n_clients={n_clients} exceeds sample count {n}")
    if concentration is not None and concentration <= 0:
        raise ValueError("concentration must be > 0")

    buckets: list[list[int]] = [[] for _ in range(n_clients)]
    cursor = 0
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        if concentration is None:
            for j, idx in enumerate(members):
                buckets[(cursor + j) % n_clients].append(int(idx))
            cursor = (cursor + len(members)) % n_clients
        else:
            props = rng.dirichlet(np.full(n_clients, concentration))
            for client, chunk in enumerate(np.split(members, np.cumsum(_split_counts(len(members), props))[:-1])):
                buckets[client].extend(int(i) for i in chunk)

    # every client needs a train and a validation sample
    min_size = min(2, n // n_clients)
    while True:
        sizes = [len(b) for b in buckets]
        small = int(np.argmin(sizes))
        if sizes[small] >= min_size:
            break
        big = int(np.argmax(sizes))
        buckets[small].append(buckets[big].pop())
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


def partition(
    x: np.ndarray,
    y: np.ndarray,
    n_clients: int,
    concentration: float | None,
    rng: np.random.Generator,
    val_fraction: float = 0.2,
) -> list[ClientShard]:
    """Split a labelled set into client shards, each with its own train/validation split."""
    shards = []
    for cid, idx in enumerate(partition_indices(y, n_clients, concentration, rng)):
        idx = rng.permutation(idx)
        n_val = min(max(1, int(round(val_fraction * idx.size))), idx.size - 1) if idx.size > 1 else 0
        val, train = idx[:n_val], idx[n_val:]
        shards.append(ClientShard(cid, x[train], y[train], x[val], y[val]))
    return shards


def corrupt_shard(shard: ClientShard, rng: np.random.Generator, k: int = N_STAGES) -> ClientShard:
    """Apply a data-level behavior. Only training labels are touched."""
    b = shard.behavior
    if b.kind != LABEL_FLIP:
        return shard
    y = shard.train_y.copy()
    n_flip = int(round(b.param * y.size))
    idx = rng.choice(y.size, size=n_flip, replace=False)
    y[idx] = (y[idx] + rng.integers(1, k, n_flip)) % k
    return replace(shard, train_y=y)


def stratified_split(labels, test_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    train, test = [], []
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        n_test = int(round(test_fraction * members.size))
        test.append(members[:n_test])
        train.append(members[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def export_csv(data: SpectralData, path) -> None:
    Path(path).write_text(to_csv_text(data))


def to_csv_text(data: SpectralData) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    f = data.bins
    writer.writerow([f"s11_{i}" for i in range(f)] + [f"s21_{i}" for i in range(f)] + ["label"])
    for a, b, lab in zip(data.s11, data.s21, data.labels):
        writer.writerow([repr(float(v)) for v in a] + [repr(float(v)) for v in b] + [int(lab)])
    return buf.getvalue()


def import_csv(path) -> SpectralData:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    f = sum(1 for h in header if h.startswith("s11_"))
    if len(header) != 2 * f + 1 or header[-1] != "label":
        raise ValueError(f"{path}: expected s11_*, s21_*, label columns")
    arr = np.array([[float(v) for v in r[:-1]] for r in body], dtype=float).reshape(len(body), 2 * f)
    labels = np.array([int(r[-1]) for r in body], dtype=np.int64)
    return SpectralData(arr[:, :f], arr[:, f:], labels)
