"""FedALA: adaptive local aggregation on the top ``p`` layers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..nn import NUM_PARAMS, _loss_gradient, batch_indices, bce_loss, forward, mbgd_train, top_layers_span
from .base import ClientUpdate, Strategy, steps_per_epoch

CONVERGE_WINDOW = 10
CONVERGE_STD = 1e-3
CONVERGE_MAX_ITERS = 50


@dataclass
class AlaClientState:
    theta: np.ndarray
    prev_local: Optional[np.ndarray] = None
    ala_rounds: int = 0
    theta_converged: bool = False


def _span(p: int, theta) -> slice:
    span = top_layers_span(p)
    if theta is not None and np.shape(theta) != (span.stop - span.start,):
        raise ValueError(
            f"theta must cover the top {p} layer(s): expected {span.stop - span.start} values, "
            f"got {np.shape(theta)}"
        )
    return span


def fedala_merge(prev_local: np.ndarray, global_params: np.ndarray, theta: np.ndarray, p: int) -> np.ndarray:
    """Lower layers come from the global model; the top ``p`` layers blend
    ``prev + (global - prev) * theta`` element-wise."""
    if np.shape(prev_local) != (NUM_PARAMS,) or np.shape(global_params) != (NUM_PARAMS,):
        raise ValueError(f"models must have {NUM_PARAMS} parameters")
    span = _span(p, theta)
    merged = np.array(global_params, dtype=np.float64)
    merged[span] = prev_local[span] + (global_params[span] - prev_local[span]) * theta
    return merged


def fedala_theta_grad(x, y, prev_local, global_params, theta, p) -> tuple[np.ndarray, float]:
    """d loss / d theta through the merge (model weights frozen), and the loss."""
    span = _span(p, theta)
    merged = fedala_merge(prev_local, global_params, theta, p)
    grad_w = _loss_gradient(merged, x, np.asarray(y, dtype=np.float64))
    loss = bce_loss(forward(merged, x), y)
    return (global_params[span] - prev_local[span]) * grad_w[span], loss


def fedala_train_theta(
    train,
    prev_local: np.ndarray,
    global_params: np.ndarray,
    theta: np.ndarray,
    lr: float,
    ala_round: int,
    p: int = 1,
    batch_size: int = 1024,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, int, bool]:
    """Gradient steps on theta, clamped to [0, 1].

    The first two ALA rounds run until the loss over the last 10 updates
    has std < 1e-3 (at most 50 updates); later rounds do one epoch.
    Returns (theta, number of updates, converged flag).
    """
    x, y = train
    x = np.asarray(x, dtype=np.float64).reshape(len(y), -1)
    rng = rng if rng is not None else np.random.default_rng(0)
    theta = np.clip(np.array(theta, dtype=np.float64), 0.0, 1.0)
    n = len(y)
    steps = steps_per_epoch(n, batch_size)
    converge = ala_round <= 2
    epochs = -(-CONVERGE_MAX_ITERS // steps) if converge else 1
    losses = []
    converged = False
    for idx in batch_indices(n, epochs, steps, batch_size, rng):
        grad, loss = fedala_theta_grad(x[idx], y[idx], prev_local, global_params, theta, p)
        theta = np.clip(theta - lr * grad, 0.0, 1.0)
        losses.append(loss)
        if converge:
            if len(losses) >= CONVERGE_WINDOW and np.std(losses[-CONVERGE_WINDOW:]) < CONVERGE_STD:
                converged = True
                break
            if len(losses) >= CONVERGE_MAX_ITERS:
                break
    return theta, len(losses), converged


class FedAla(Strategy):
    name = "fedala"

    def start(self, global_params):
        span = top_layers_span(self.config.ala_layers)
        size = span.stop - span.start
        self.clients = {i: AlaClientState(np.ones(size)) for i in range(self.num_clients)}

    def local_update(self, client, global_params, directive, rng, received_variate=None):
        cfg = self.config
        state = self.clients[client.client_id]
        theta = state.theta
        ala_updates = 0
        converged = state.theta_converged
        start = global_params
        if state.prev_local is not None:
            ala_round = state.ala_rounds + 1
            theta, ala_updates, conv = fedala_train_theta(
                client.train, state.prev_local, global_params, theta, cfg.ala_lr,
                ala_round, cfg.ala_layers, cfg.batch_size, rng,
            )
            converged = converged or conv
            start = fedala_merge(state.prev_local, global_params, theta, cfg.ala_layers)
        steps = steps_per_epoch(client.num_train, cfg.batch_size)
        model, n_updates = mbgd_train(
            start, client.train, cfg.local_epochs, steps, cfg.batch_size, cfg.local_lr, None, rng
        )
        return ClientUpdate(
            client.client_id, model.params, client.num_train, n_updates,
            min(cfg.batch_size, client.num_train),
            extras={
                "theta": theta,
                "prev_local": model.params.copy(),
                "ran_ala": state.prev_local is not None,
                "ala_updates": ala_updates,
                "converged": converged,
            },
        )

    def end_round(self, round_idx, global_params, new_params, updates):
        for u in updates:
            st = self.clients[u.client_id]
            st.theta = u.extras["theta"]
            st.prev_local = u.extras["prev_local"]
            st.theta_converged = u.extras["converged"]
            if u.extras["ran_ala"]:
                st.ala_rounds += 1
