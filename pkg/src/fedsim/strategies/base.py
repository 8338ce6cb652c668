"""Strategy interface shared by all seven algorithms.

A round is split into three extension points: who receives work
(``select``), what each client does with the global model
(``local_update``, pure with respect to strategy state, may run on a worker
pool) and how the server combines results (``aggregate``). State changes
happen in ``end_round`` on the coordinator thread only.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

import numpy as np

from ..datagen import ClientDataset
from ..nn import evaluate, mbgd_train


@dataclass
class StrategyConfig:
    selection_ratio: float = 0.5
    local_epochs: int = 1
    batch_size: int = 1024
    local_lr: float = 0.1
    prox_lambda: float = 1.0
    global_lr: float = 1.0
    ala_layers: int = 1
    ala_lr: float = 1.0
    dafl_beta: float = 0.6
    sbs_lambda: float = 1.0
    sbs_epsilon_min: float = 0.1
    sbs_epsilon_init: float = 1.0
    sbs_epsilon_decay: float = 0.97
    sbs_temperature: float = 10.0
    sbs_clients_per_round: int = 6
    flad_patience: int = 25
    flad_epoch_range: tuple[int, int] = (1, 5)
    flad_step_range: tuple[int, int] = (1, 1000)

    def __post_init__(self):
        self.flad_epoch_range = tuple(int(v) for v in self.flad_epoch_range)
        self.flad_step_range = tuple(int(v) for v in self.flad_step_range)
        problems = []
        if not 0 < self.selection_ratio <= 1:
            problems.append("selection_ratio must be in (0, 1]")
        if self.local_epochs < 0:
            problems.append("local_epochs must be >= 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.prox_lambda < 0 or self.sbs_lambda < 0:
            problems.append("regularisation weights must be >= 0")
        if not 0 <= self.sbs_epsilon_min <= self.sbs_epsilon_init <= 1:
            problems.append("need 0 <= sbs_epsilon_min <= sbs_epsilon_init <= 1")
        if self.flad_patience < 1:
            problems.append("flad_patience must be >= 1")
        for name in ("flad_epoch_range", "flad_step_range"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                problems.append(f"{name} must satisfy 0 <= min <= max")
        if self.flad_step_range[0] < 1:
            problems.append("flad_step_range min must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flad_epoch_range"] = list(self.flad_epoch_range)
        d["flad_step_range"] = list(self.flad_step_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "StrategyConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config fields: {', '.join(unknown)}")
        return cls(**data)


def steps_per_epoch(num_train: int, batch_size: int) -> int:
    return max(1, math.ceil(num_train / batch_size))


@dataclass
class ClientUpdate:
    client_id: int
    params: Optional[np.ndarray]
    num_train_samples: int
    num_updates: int = 0
    batch_size: int = 0
    local_val_accuracy: float = 0.0
    local_val_loss: float = 0.0
    global_val_loss: float = 0.0
    variate_delta: Optional[np.ndarray] = None
    participated: bool = True
    # strategy-private results applied in end_round (e.g. ALA weights)
    extras: dict[str, Any] = field(default_factory=dict)


@dataclass
class Directive:
    epochs: int
    steps: int


@dataclass
class Selection:
    trainers: list[int]
    directives: dict[int, Directive] = field(default_factory=dict)


def random_select(num_clients: int, ratio: float, rng: np.random.Generator) -> list[int]:
    """Uniform sample of round(N * ratio) clients without replacement, sorted."""
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    k = max(1, int(round(num_clients * ratio)))
    return sorted(int(i) for i in rng.choice(num_clients, size=k, replace=False))


def _check_updates(updates) -> list[ClientUpdate]:
    updates = list(updates)
    if not updates:
        raise ValueError("cannot aggregate an empty update set")
    return updates


def size_weights(updates) -> np.ndarray:
    sizes = np.array([u.num_train_samples for u in updates], dtype=np.float64)
    return sizes / sizes.sum()


def fedavg_aggregate(global_params: np.ndarray, updates) -> np.ndarray:
    """w - sum_i rho_i (w - w_i), rho_i proportional to training-set size."""
    updates = _check_updates(updates)
    rho = size_weights(updates)
    step = np.zeros_like(global_params)
    for r, u in zip(rho, updates):
        step += r * (global_params - u.params)
    return global_params - step


class Strategy:
    """Base class; concrete algorithms override the hooks they change.

    Transport traits read by the engine:
      eval_broadcast   every client receives w^t and reports scalars first
      training_copy    trainers get their own copy of w^t even after the
                       evaluation broadcast
      train_broadcast  every client trains (and therefore receives w^t)
      sends_variates   a control variate travels with each model
      upload_scalars   scalars uploaded alongside each local model
      self_stopping    the strategy can end the run on its own
    """

    name = "base"
    eval_broadcast = False
    training_copy = False
    train_broadcast = False
    sends_variates = False
    upload_scalars = 0
    self_stopping = False

    def __init__(self, config: StrategyConfig, num_clients: int, num_params: int):
        self.config = config
        self.num_clients = num_clients
        self.num_params = num_params

    # phase 1 ---------------------------------------------------------------
    def start(self, global_params: np.ndarray) -> None:
        """Called once before round 0."""

    def client_report(self, client: ClientDataset, global_params: np.ndarray) -> list[float]:
        """Scalars a client sends back after the evaluation broadcast."""
        return []

    def should_stop(self, round_idx: int, reports: dict[int, list[float]], global_params) -> bool:
        return False

    def select(self, round_idx: int, rng: np.random.Generator, reports: dict[int, list[float]]) -> Selection:
        return Selection(random_select(self.num_clients, self.config.selection_ratio, rng))

    def downlink_variate(self, client_id: int) -> Optional[np.ndarray]:
        return None

    # phase 2 ---------------------------------------------------------------
    def local_update(
        self,
        client: ClientDataset,
        global_params: np.ndarray,
        directive: Optional[Directive],
        rng: np.random.Generator,
        received_variate: Optional[np.ndarray] = None,
    ) -> ClientUpdate:
        cfg = self.config
        steps = steps_per_epoch(client.num_train, cfg.batch_size)
        model, n_updates = mbgd_train(
            global_params, client.train, cfg.local_epochs, steps, cfg.batch_size,
            cfg.local_lr, self.modifier(client, global_params), rng,
        )
        return ClientUpdate(
            client.client_id, model.params, client.num_train, n_updates,
            min(cfg.batch_size, client.num_train),
        )

    def modifier(self, client: ClientDataset, global_params: np.ndarray):
        return None

    # phase 3 ---------------------------------------------------------------
    def aggregate(self, global_params: np.ndarray, updates: list[ClientUpdate]) -> np.ndarray:
        return fedavg_aggregate(global_params, updates)

    def end_round(self, round_idx: int, global_params: np.ndarray, new_params: np.ndarray,
                  updates: list[ClientUpdate]) -> None:
        pass

    def best_params(self) -> Optional[np.ndarray]:
        return None


def val_loss_and_accuracy(params: np.ndarray, client: ClientDataset) -> tuple[float, float]:
    m = evaluate(params, client.val)
    return m.mean_loss, m.accuracy
