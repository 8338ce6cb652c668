"""SCAFFOLD with option-I control variates (full-pass gradient at w^t)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import GradModifier, backward, mbgd_train
from .base import ClientUpdate, Strategy, _check_updates, size_weights, steps_per_epoch


@dataclass
class ScaffoldState:
    c_global: np.ndarray
    c_local: np.ndarray  # (num_clients, P), row i is client i's variate

    @classmethod
    def zeros(cls, num_clients: int, num_params: int) -> "ScaffoldState":
        return cls(np.zeros(num_params), np.zeros((num_clients, num_params)))


def scaffold_local_step_modifier(state: ScaffoldState, client_id: int, c_global=None) -> GradModifier:
    """Adds (c - c_i) to every local gradient. ``c_global`` overrides the
    state's copy with the one the client actually received."""
    if not 0 <= client_id < state.c_local.shape[0]:
        raise KeyError(f"unknown client {client_id}")
    c = state.c_global if c_global is None else c_global
    return GradModifier("variate_correction", c_global=c, c_local=state.c_local[client_id])


def scaffold_update_local_variate(train, w_global: np.ndarray) -> np.ndarray:
    """Option I: mean loss gradient at the received global model, one full
    pass over the local training set."""
    x, y = train
    if len(y) == 0:
        raise ValueError("cannot compute a control variate on an empty dataset")
    return backward(w_global, x, y)


def scaffold_update_global_variate(c_global: np.ndarray, deltas, num_clients: int) -> np.ndarray:
    """c + (1/N) * sum of this round's variate deltas (N = federation size)."""
    out = c_global.copy()
    for d in deltas:
        out += d / num_clients
    return out


def scaffold_aggregate(global_params: np.ndarray, updates, global_lr: float) -> np.ndarray:
    updates = _check_updates(updates)
    rho = size_weights(updates)
    step = np.zeros_like(global_params)
    for r, u in zip(rho, updates):
        step += r * (global_params - u.params)
    return global_params - global_lr * step


class Scaffold(Strategy):
    name = "scaffold"
    sends_variates = True

    def start(self, global_params):
        self.state = ScaffoldState.zeros(self.num_clients, self.num_params)

    def downlink_variate(self, client_id):
        return self.state.c_global

    def local_update(self, client, global_params, directive, rng, received_variate=None):
        cfg = self.config
        c_global = self.state.c_global if received_variate is None else received_variate
        mod = scaffold_local_step_modifier(self.state, client.client_id, c_global)
        steps = steps_per_epoch(client.num_train, cfg.batch_size)
        model, n_updates = mbgd_train(
            global_params, client.train, cfg.local_epochs, steps, cfg.batch_size,
            cfg.local_lr, mod, rng,
        )
        new_c = scaffold_update_local_variate(client.train, global_params)
        return ClientUpdate(
            client.client_id, model.params, client.num_train, n_updates,
            min(cfg.batch_size, client.num_train),
            variate_delta=new_c - self.state.c_local[client.client_id],
            extras={"c_local": new_c},
        )

    def aggregate(self, global_params, updates):
        return scaffold_aggregate(global_params, updates, self.config.global_lr)

    def end_round(self, round_idx, global_params, new_params, updates):
        # client-side copies stay float64; the server sums what it received
        for u in updates:
            self.state.c_local[u.client_id] = u.extras["c_local"]
        self.state.c_global = scaffold_update_global_variate(
            self.state.c_global, [u.variate_delta for u in updates], self.num_clients
        )
