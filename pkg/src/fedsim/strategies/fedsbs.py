"""FedSBS: information-gain client scoring with epsilon-greedy selection,
a regularised local loss and momentum aggregation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..datagen import class_proportions
from ..nn import GradModifier, evaluate, mbgd_train
from .base import ClientUpdate, Selection, Strategy, _check_updates, size_weights, steps_per_epoch

log = logging.getLogger(__name__)
LOSS_FLOOR = 1e-12


@dataclass
class SbsState:
    epsilon: float
    selection_counts: np.ndarray
    prev_global: np.ndarray
    ig_scores: np.ndarray
    last_local: dict[int, np.ndarray] = field(default_factory=dict)


def sbs_imbalance(p_c, local_val_loss: float) -> float:
    """Entropy-based imbalance coefficient phi (0 * log2 0 taken as 0)."""
    p = np.asarray(p_c, dtype=np.float64)
    nz = p[p > 0]
    plogp = float(np.sum(nz * np.log2(nz)))
    if math.log(max(local_val_loss, LOSS_FLOOR)) < 0:
        return 1.0 + plogp
    return -plogp


def _safe_log(loss: float) -> float:
    if loss <= 0:
        log.warning("non-positive loss %r clamped to %g", loss, LOSS_FLOOR)
    return math.log(max(loss, LOSS_FLOOR))


def sbs_information_gain(global_val_loss: float, local_val_loss: float, phi: float) -> float:
    return -_safe_log(global_val_loss) + phi * _safe_log(local_val_loss)


def sbs_select(
    state: SbsState,
    ig_scores,
    s: int,
    rng: np.random.Generator,
    temperature: float = 10.0,
    decay: float = 0.97,
    epsilon_min: float = 0.1,
) -> list[int]:
    """Fill ``s`` slots: random with probability epsilon, otherwise the best
    remaining client by ``I_i - count_i / temperature`` (the log of
    exp(I_i) damped by exp(-count_i / temperature)); ties go to the lower id.

    Updates selection counts and decays epsilon for the next round.
    """
    scores = np.asarray(ig_scores, dtype=np.float64)
    n = scores.shape[0]
    if not 0 <= s <= n:
        raise ValueError(f"cannot select {s} of {n} clients")
    damped = scores - state.selection_counts / temperature
    remaining = list(range(n))
    chosen = []
    for _ in range(s):
        if rng.random() < state.epsilon:
            pick = remaining[int(rng.integers(len(remaining)))]
        else:
            pick = min(remaining, key=lambda i: (-damped[i], i))
        remaining.remove(pick)
        chosen.append(pick)
    chosen.sort()
    state.selection_counts[chosen] += 1
    state.ig_scores = scores.copy()
    state.epsilon = max(epsilon_min, state.epsilon * decay)
    return chosen


def sbs_modifier(w_current, w_global, w_global_prev, lam: float) -> GradModifier:
    """Additive gradient term lam * (w + w^t - w^{t-1})."""
    return GradModifier("additive", lam=lam, term=w_current + w_global - w_global_prev)


def sbs_aggregate(global_params, prev_global, updates, global_lr: float) -> np.ndarray:
    """Size-weighted mean of the local models plus eta_g * (w^t - w^{t-1})."""
    updates = _check_updates(updates)
    rho = size_weights(updates)
    out = np.zeros_like(global_params)
    for r, u in zip(rho, updates):
        out += r * u.params
    return out + global_lr * (global_params - prev_global)


class FedSbs(Strategy):
    name = "fedsbs"
    eval_broadcast = True
    training_copy = True

    def start(self, global_params):
        cfg = self.config
        self.state = SbsState(
            epsilon=cfg.sbs_epsilon_init,
            selection_counts=np.zeros(self.num_clients, dtype=np.int64),
            prev_global=global_params.copy(),
            ig_scores=np.zeros(self.num_clients),
        )

    def client_report(self, client, global_params):
        """(global loss, local loss, imbalance) on the validation split."""
        g_loss = evaluate(global_params, client.val).mean_loss
        local = self.state.last_local.get(client.client_id)
        l_loss = g_loss if local is None else evaluate(local, client.val).mean_loss
        phi = sbs_imbalance(class_proportions(client), l_loss)
        return [g_loss, l_loss, phi]

    def select(self, round_idx, rng, reports):
        cfg = self.config
        scores = np.array([sbs_information_gain(*reports[i]) for i in range(self.num_clients)])
        chosen = sbs_select(
            self.state, scores, min(cfg.sbs_clients_per_round, self.num_clients), rng,
            cfg.sbs_temperature, cfg.sbs_epsilon_decay, cfg.sbs_epsilon_min,
        )
        return Selection(chosen)

    def local_update(self, client, global_params, directive, rng, received_variate=None):
        cfg = self.config
        prev = self.state.prev_global
        lam = cfg.sbs_lambda
        steps = steps_per_epoch(client.num_train, cfg.batch_size)
        model, n_updates = mbgd_train(
            global_params, client.train, cfg.local_epochs, steps, cfg.batch_size, cfg.local_lr,
            lambda w: sbs_modifier(w, global_params, prev, lam), rng,
        )
        m = evaluate(model.params, client.val)
        return ClientUpdate(
            client.client_id, model.params, client.num_train, n_updates,
            min(cfg.batch_size, client.num_train),
            local_val_accuracy=m.accuracy, local_val_loss=m.mean_loss,
            extras={"local": model.params.copy()},
        )

    def aggregate(self, global_params, updates):
        return sbs_aggregate(global_params, self.state.prev_global, updates, self.config.global_lr)

    def end_round(self, round_idx, global_params, new_params, updates):
        for u in updates:
            self.state.last_local[u.client_id] = u.extras["local"]
        self.state.prev_global = global_params.copy()
