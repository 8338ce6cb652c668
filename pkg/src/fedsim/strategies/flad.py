"""FLAD: accuracy-driven selection and work assignment, plain mean
aggregation, early stopping with patience."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..nn import evaluate, mbgd_train
from .base import ClientUpdate, Directive, Selection, Strategy, _check_updates

TOP_TOLERANCE = 1e-6
IMPROVEMENT_TOLERANCE = 1e-6


@dataclass
class FladState:
    client_accuracies: Optional[np.ndarray] = None
    best_mean_accuracy: float = -math.inf
    rounds_since_improvement: int = 0
    best_round: int = -1
    best_params: Optional[np.ndarray] = None


def flad_assign_work(accuracies, epoch_range, step_range) -> list[tuple[bool, int, int]]:
    """Per client (selected, epochs, steps).

    Clients at the top accuracy are skipped. The rest get work linear in
    their normalised deficit (A_max - A_i) / (A_max - A_min). When every
    client scores the same (and below 1) all of them train at minimum work.
    """
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size == 0:
        raise ValueError("need at least one accuracy")
    e_lo, e_hi = epoch_range
    s_lo, s_hi = step_range
    a_max, a_min = float(acc.max()), float(acc.min())
    if a_max - a_min <= TOP_TOLERANCE:
        everyone = a_max < 1.0 - TOP_TOLERANCE
        return [(everyone, e_lo, s_lo) if everyone else (False, 0, 0) for _ in acc]
    out = []
    for a in acc:
        if a < a_max - TOP_TOLERANCE:
            d = (a_max - a) / (a_max - a_min)
            out.append((True, e_lo + int(round(d * (e_hi - e_lo))), s_lo + int(round(d * (s_hi - s_lo)))))
        else:
            out.append((False, 0, 0))
    return out


def flad_aggregate(updates) -> np.ndarray:
    updates = _check_updates(updates)
    return np.mean(np.stack([u.params for u in updates]), axis=0)


def flad_should_stop(state: FladState, mean_val_accuracy: float, patience: int) -> bool:
    """Track the best mean accuracy; True once ``patience`` rounds pass
    without a strict improvement."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if mean_val_accuracy > state.best_mean_accuracy + IMPROVEMENT_TOLERANCE:
        state.best_mean_accuracy = mean_val_accuracy
        state.rounds_since_improvement = 0
        return False
    state.rounds_since_improvement += 1
    return state.rounds_since_improvement >= patience


def flad_batch_size(num_train: int, steps: int) -> int:
    """Batch size that makes ``steps`` batches cover one epoch."""
    return max(1, math.ceil(num_train / steps))


class Flad(Strategy):
    name = "flad"
    eval_broadcast = True
    self_stopping = True

    def start(self, global_params):
        self.state = FladState()

    def client_report(self, client, global_params):
        return [evaluate(global_params, client.val).accuracy]

    def should_stop(self, round_idx, reports, global_params):
        acc = np.array([reports[i][0] for i in range(self.num_clients)])
        self.state.client_accuracies = acc
        before = self.state.best_mean_accuracy
        stop = flad_should_stop(self.state, float(acc.mean()), self.config.flad_patience)
        if self.state.best_mean_accuracy != before:
            self.state.best_round = round_idx
            self.state.best_params = np.array(global_params, dtype=np.float64)
        return stop

    def select(self, round_idx, rng, reports):
        cfg = self.config
        work = flad_assign_work(self.state.client_accuracies, cfg.flad_epoch_range, cfg.flad_step_range)
        trainers = [i for i, (sel, _, _) in enumerate(work) if sel]
        return Selection(trainers, {i: Directive(work[i][1], work[i][2]) for i in trainers})

    def local_update(self, client, global_params, directive, rng, received_variate=None):
        bs = flad_batch_size(client.num_train, directive.steps)
        model, n_updates = mbgd_train(
            global_params, client.train, directive.epochs, directive.steps, bs,
            self.config.local_lr, None, rng,
        )
        return ClientUpdate(client.client_id, model.params, client.num_train, n_updates, min(bs, client.num_train))

    def aggregate(self, global_params, updates):
        return flad_aggregate(updates)

    def best_params(self):
        return self.state.best_params
