"""DAFL: every client trains, only those above an accuracy threshold upload."""

from __future__ import annotations

import numpy as np

from ..nn import evaluate
from .base import Selection, Strategy, _check_updates


def dafl_filter(local_val_accuracy: float, beta: float) -> bool:
    return local_val_accuracy >= beta


def dafl_weights(sizes, accuracies) -> np.ndarray:
    """Normalised rho_i * softmax(A)_i over the uploading clients."""
    sizes = np.asarray(sizes, dtype=np.float64)
    acc = np.asarray(accuracies, dtype=np.float64)
    rho = sizes / sizes.sum()
    e = np.exp(acc - acc.max())
    a = e / e.sum()
    w = rho * a
    return w / w.sum()


def dafl_aggregate(updates) -> np.ndarray:
    updates = _check_updates(updates)
    coef = dafl_weights(
        [u.num_train_samples for u in updates], [u.local_val_accuracy for u in updates]
    )
    out = np.zeros_like(updates[0].params)
    for c, u in zip(coef, updates):
        out += c * u.params
    return out


class Dafl(Strategy):
    name = "dafl"
    train_broadcast = True
    upload_scalars = 2  # local accuracy and training-set size

    def select(self, round_idx, rng, reports):
        return Selection(list(range(self.num_clients)))

    def local_update(self, client, global_params, directive, rng, received_variate=None):
        update = super().local_update(client, global_params, directive, rng)
        m = evaluate(update.params, client.val)
        update.local_val_accuracy = m.accuracy
        update.local_val_loss = m.mean_loss
        update.participated = dafl_filter(m.accuracy, self.config.dafl_beta)
        return update

    def aggregate(self, global_params, updates):
        return dafl_aggregate(updates)
