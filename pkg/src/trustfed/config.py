"""Experiment configuration: flat ``key = value`` files with dotted section keys.

Example::

    # desk-scale comparison with two label flippers
    strategy = atsssf_adaptive
    rounds = 50
    adversaries.count = 2
    adversaries.behavior = label_flip
    smoother.variance_threshold = 0.01
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Iterable, Mapping

from trustfed.dataset import BEHAVIORS, HONEST

FEDAVG = "fedavg_baseline"
ATSSSF_STATIC = "atsssf_static"
ATSSSF_ADAPTIVE = "atsssf_adaptive"
STRATEGIES = (FEDAVG, ATSSSF_STATIC, ATSSSF_ADAPTIVE)

PAPER_SCALE = {"n_clients": 100, "rounds": 500}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key."""


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    n_clients: int = 10
    rounds: int = 50
    strategy: str = ATSSSF_ADAPTIVE
    tau: float = 0.75
    m: int = 3
    alpha_init: float = 0.3
    variance_threshold: float = 0.01
    alpha_floor: float = 0.05
    weights: tuple = (0.25, 0.25, 0.25, 0.25)
    n_per_class: int = 500
    bins: int = 32
    concentration: float | None = 2.0
    noise: float = 0.05
    spread: float = 0.04
    test_fraction: float = 0.2
    smote: bool = True
    smote_k: int = 5
    dataset_path: str = ""
    adversaries: int = 0
    adversary_behavior: str = "label_flip"
    flip_fraction: float = 1.0
    noise_sigma: float = 0.5
    hidden: tuple = (64, 32, 16)
    dropout: float = 0.2
    lr: float = 0.001
    batch_size: int = 16
    local_epochs: int = 1
    sample_fraction: float = 1.0
    workers: int = 1
    out: str = "runs"

    def validate(self) -> "ExperimentConfig":
        def fail(attr, msg):
            raise ConfigError(f"{KEY_OF[attr]}: {msg}")

        if self.strategy not in STRATEGIES:
            fail("strategy", f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if not 0.0 < self.tau < 1.0:
            fail("tau", f"must lie in (0, 1), got {self.tau}")
        if self.m < 0:
            fail("m", f"must be >= 0, got {self.m}")
        if not self.alpha_floor <= self.alpha_init <= 1.0:
            fail("alpha_init", f"must lie in [alpha_floor, 1], got {self.alpha_init}")
        if not 0.0 < self.alpha_floor <= 1.0:
            fail("alpha_floor", f"must lie in (0, 1], got {self.alpha_floor}")
        if self.variance_threshold < 0:
            fail("variance_threshold", "must be >= 0")
        if len(self.weights) != 4 or any(w < 0 for w in self.weights):
            fail("weights", "need 4 non-negative criteria weights")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            fail("weights", f"must sum to 1, got {sum(self.weights)}")
        if self.n_clients < 1:
            fail("n_clients", "must be >= 1")
        if self.rounds < 0:
            fail("rounds", "must be >= 0")
        if self.n_per_class < 1:
            fail("n_per_class", "must be >= 1")
        if self.bins < 2:
            fail("bins", "must be >= 2")
        if self.concentration is not None and self.concentration <= 0:
            fail("concentration", "must be > 0 or 'iid'")
        if self.noise < 0 or self.spread < 0:
            fail("noise" if self.noise < 0 else "spread", "must be >= 0")
        if not 0.0 < self.test_fraction < 1.0:
            fail("test_fraction", "must lie in (0, 1)")
        if self.smote_k < 1:
            fail("smote_k", "must be >= 1")
        if not 0 <= self.adversaries <= self.n_clients:
            fail("adversaries", f"count must lie in [0, n_clients={self.n_clients}]")
        if self.adversary_behavior not in BEHAVIORS or self.adversary_behavior == HONEST:
            fail("adversary_behavior", f"unknown adversary behavior {self.adversary_behavior!r}")
        if not 0.0 <= self.flip_fraction <= 1.0:
            fail("flip_fraction", "must lie in [0, 1]")
        if self.noise_sigma < 0:
            fail("noise_sigma", "must be >= 0")
        if not self.hidden or any(h < 1 for h in self.hidden):
            fail("hidden", "layer widths must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            fail("dropout", "must lie in [0, 1)")
        if self.lr <= 0:
            fail("lr", "must be > 0")
        if self.batch_size < 1:
            fail("batch_size", "must be >= 1")
        if self.local_epochs < 0:
            fail("local_epochs", "must be >= 0")
        if not 0.0 < self.sample_fraction <= 1.0:
            fail("sample_fraction", "must lie in (0, 1]")
        if self.workers < 1:
            fail("workers", "must be >= 1")
        return self

    def to_dict(self) -> dict:
        """Dotted-key echo used in reports."""
        raw = asdict(self)
        out = {}
        for attr, key in KEY_OF.items():
            value = raw[attr]
            if isinstance(value, tuple):
                value = list(value)
            if attr == "concentration" and value is None:
                value = "iid"
            out[key] = value
        return out

    def with_overrides(self, overrides: Mapping[str, str]) -> "ExperimentConfig":
        return _apply(self, overrides).validate()


# dotted config key for every field
KEY_OF = {
    "seed": "seed",
    "n_clients": "clients",
    "rounds": "rounds",
    "strategy": "strategy",
    "tau": "trust.tau",
    "m": "trust.max_omissions",
    "alpha_init": "smoother.alpha",
    "variance_threshold": "smoother.variance_threshold",
    "alpha_floor": "smoother.alpha_floor",
    "weights": "trust.weights",
    "n_per_class": "dataset.n_per_class",
    "bins": "dataset.bins",
    "concentration": "dataset.concentration",
    "noise": "dataset.noise",
    "spread": "dataset.spread",
    "test_fraction": "dataset.test_fraction",
    "smote": "dataset.smote",
    "smote_k": "dataset.smote_k",
    "dataset_path": "dataset.path",
    "adversaries": "adversaries.count",
    "adversary_behavior": "adversaries.behavior",
    "flip_fraction": "adversaries.flip_fraction",
    "noise_sigma": "adversaries.noise_sigma",
    "hidden": "model.hidden",
    "dropout": "model.dropout",
    "lr": "train.lr",
    "batch_size": "train.batch_size",
    "local_epochs": "train.local_epochs",
    "sample_fraction": "federation.sample_fraction",
    "workers": "federation.workers",
    "out": "output.dir",
}
FIELD_OF = {key: attr for attr, key in KEY_OF.items()}
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(attr: str, text: str):
    kind = _TYPES[attr]
    text = text.strip()
    try:
        if attr == "concentration":
            return None if text.lower() in ("iid", "inf", "none") else float(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "tuple":
            conv = int if attr == "hidden" else float
            return tuple(conv(p) for p in text.replace(";", ",").split(",") if p.strip())
        return text
    except ValueError:
        raise ConfigError(f"{KEY_OF[attr]}: cannot parse {text!r} as {kind}") from None


def _apply(base: ExperimentConfig, overrides: Mapping[str, str]) -> ExperimentConfig:
    changes = {}
    if str(overrides.get("paper_scale", "false")).strip().lower() in ("1", "true", "yes", "on"):
        changes.update(PAPER_SCALE)
    for key, value in overrides.items():
        if key == "paper_scale":
            continue
        if key not in FIELD_OF:
            raise ConfigError(f"{key}: unknown configuration key")
        attr = FIELD_OF[key]
        changes[attr] = value if not isinstance(value, str) else _convert(attr, value)
    return replace(base, **changes)


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    entries = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in entries:
            raise ConfigError(f"{key}: duplicate key at {path}:{lineno}")
        entries[key] = value
    return entries


def parse_adversaries(spec: str) -> dict:
    """``COUNT[:BEHAVIOR[:PARAM]]``, e.g. ``2:label_flip:1.0`` or ``3:noisy_update:0.5``."""
    parts = spec.split(":")
    if not 1 <= len(parts) <= 3:
        raise ConfigError(f"adversaries: cannot parse spec {spec!r}")
    out = {"adversaries.count": parts[0]}
    if len(parts) > 1:
        out["adversaries.behavior"] = parts[1]
    if len(parts) > 2:
        param_key = "adversaries.noise_sigma" if parts[1] == "noisy_update" else "adversaries.flip_fraction"
        out[param_key] = parts[2]
    return out


def parse_config(path=None, overrides: Mapping[str, str] | Iterable = ()) -> ExperimentConfig:
    """File values first, then overrides; everything is validated."""
    entries = read_config_file(path) if path else {}
    merged = dict(entries)
    merged.update(dict(overrides))
    return _apply(ExperimentConfig(), merged).validate()
