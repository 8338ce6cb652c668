from .base import (
    ClientUpdate,
    Directive,
    Selection,
    Strategy,
    StrategyConfig,
    fedavg_aggregate,
    random_select,
    steps_per_epoch,
)
from .dafl import Dafl
from .fedala import FedAla
from .fedavg import FedAvg, FedProx
from .fedsbs import FedSbs
from .flad import Flad
from .scaffold import Scaffold

STRATEGIES = {
    cls.name: cls for cls in (FedAvg, FedProx, Scaffold, FedAla, Dafl, FedSbs, Flad)
}


def make_strategy(name: str, config: StrategyConfig, num_clients: int, num_params: int) -> Strategy:
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}") from None
    return cls(config, num_clients, num_params)


__all__ = [
    "STRATEGIES", "ClientUpdate", "Dafl", "Directive", "FedAla", "FedAvg", "FedProx", "FedSbs",
    "Flad", "Scaffold", "Selection", "Strategy", "StrategyConfig", "fedavg_aggregate",
    "make_strategy", "random_select", "steps_per_epoch",
]
