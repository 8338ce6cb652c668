"""FedAvg and FedProx: random participants, size-weighted averaging."""

from __future__ import annotations

import numpy as np

from ..nn import GradModifier
from .base import Strategy, fedavg_aggregate, random_select  # noqa: F401  (re-exported)


class FedAvg(Strategy):
    name = "fedavg"


def fedprox_modifier(w_global: np.ndarray, lam: float) -> GradModifier:
    """Gradient of (lam/2) * ||w - w_global||^2, evaluated at each step's w."""
    if lam < 0:
        raise ValueError("prox lambda must be >= 0")
    return GradModifier("proximal", lam=lam, anchor=w_global)


class FedProx(Strategy):
    name = "fedprox"

    def modifier(self, client, global_params):
        return fedprox_modifier(global_params, self.config.prox_lambda)
