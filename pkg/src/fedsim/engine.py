"""Federation coordinator: the round loop, transport accounting and
per-round evaluation."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .datagen import ClientDataset
from .nn import NUM_PARAMS, EvalMetrics, evaluate, init_model
from .strategies import Strategy, StrategyConfig, make_strategy
from .transport import (  # noqa: F401  (public engine surface)
    Transport,
    TransportLedger,
    account_transfer,
    deserialize_model,
    serialize_model,
)

log = logging.getLogger(__name__)

FLAD_SAFETY_CAP = 1000
_SELECT_STREAM = 0x5E1EC7
_CLIENT_STREAM = 0xC11E47


@dataclass
class RoundRecord:
    round: int
    selected: list[int]
    participated: list[int]
    num_updates: list[int]
    batch_sizes: list[int]
    eval_accuracy: list[float]
    val_accuracy: list[float]
    val_f1: list[float]
    bytes_down: list[int]
    bytes_up: list[int]
    work_units: int
    terminal: bool = False

    @property
    def mean_eval_accuracy(self) -> float:
        return float(np.mean(self.eval_accuracy))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ExperimentResult:
    strategy: str
    config: dict
    seed: int
    client_names: list[str]
    rounds: list[RoundRecord]
    final_params: np.ndarray
    test_metrics: list[EvalMetrics]
    stop_reason: str
    ledger: TransportLedger
    initial_model_hash: str
    best_round: Optional[int] = None
    client_families: list[str] = field(default_factory=list)

    @property
    def num_rounds(self) -> int:
        return len(self.rounds)

    @property
    def training_rounds(self) -> int:
        """Rounds that trained; a FLAD stop adds one evaluation-only round."""
        return sum(1 for r in self.rounds if not r.terminal)


def params_hash(params) -> str:
    return hashlib.sha256(np.ascontiguousarray(params, dtype="<f8").tobytes()).hexdigest()


def _client_rng(seed: int, round_idx: int, client_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, round_idx, client_id, _CLIENT_STREAM]))


def _select_rng(seed: int, round_idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, round_idx, _SELECT_STREAM]))


class Coordinator:
    """Owns the global model, strategy state and ledger for one run.

    Client jobs may run on a thread pool; they receive copies of what was
    sent to them and results are applied sorted by client id, so output
    does not depend on the worker count.
    """

    def __init__(self, federation: list[ClientDataset], strategy: Strategy, seed: int,
                 initial_params: np.ndarray, threads: int = 1):
        self.clients = sorted(federation, key=lambda c: c.client_id)
        ids = [c.client_id for c in self.clients]
        if ids != list(range(len(ids))):
            raise ValueError(f"client ids must be 0..N-1, got {ids}")
        self.strategy = strategy
        self.seed = seed
        self.params = np.array(initial_params, dtype=np.float64)
        self.ledger = TransportLedger(tuple(ids))
        self.transport = Transport(self.ledger, NUM_PARAMS)
        self.threads = max(1, int(threads))
        self.round = 0
        self.stopped = False
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None
        self._val_metrics = self._evaluate_all(self.params)
        strategy.start(self.params.copy())

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(i) for i in items]
        return list(self._pool.map(fn, items))

    def _evaluate_all(self, params) -> list[EvalMetrics]:
        return self._map(lambda c: evaluate(params, c.val), self.clients)

    def run_round(self) -> RoundRecord:
        """select -> distribute -> local work -> upload -> aggregate."""
        strat, tr, t = self.strategy, self.transport, self.round
        n = len(self.clients)
        w = self.params
        eval_acc = [m.accuracy for m in self._val_metrics]

        received: dict[int, np.ndarray] = {}
        reports: dict[int, list[float]] = {}
        if strat.eval_broadcast:
            for c in self.clients:
                received[c.client_id] = tr.send_model(c.client_id, w)
            raw = self._map(lambda c: strat.client_report(c, received[c.client_id]), self.clients)
            for c, values in zip(self.clients, raw):
                reports[c.client_id] = tr.upload_scalars(c.client_id, values)
            if strat.should_stop(t, reports, w):
                return self._finish_round(t, [], [], {}, w, eval_acc, terminal=True)

        selection = strat.select(t, _select_rng(self.seed, t), reports)
        trainers = sorted(selection.trainers)
        inputs = {}
        for cid in trainers:
            if cid in received and not strat.training_copy:
                model_in = received[cid]
            else:
                model_in = tr.send_model(cid, w)
            variate = strat.downlink_variate(cid)
            if variate is not None:
                variate = tr.send_model(cid, variate, kind="control_variate")
            directive = selection.directives.get(cid)
            if directive is not None:
                tr.send_directive(cid, directive.epochs, directive.steps)
            inputs[cid] = (model_in, directive, variate)

        def work(cid):
            model_in, directive, variate = inputs[cid]
            return strat.local_update(self.clients[cid], model_in, directive,
                                      _client_rng(self.seed, t, cid), variate)

        updates = self._map(work, trainers)
        uploaded = []
        for u in updates:
            if not u.participated:
                continue
            u.params = tr.upload_model(u.client_id, u.params)
            if strat.sends_variates:
                u.variate_delta = tr.upload_model(u.client_id, u.variate_delta, kind="control_variate")
            if strat.upload_scalars:
                tr.upload_scalars(u.client_id, [u.local_val_accuracy, float(u.num_train_samples)][: strat.upload_scalars])
            uploaded.append(u)

        if uploaded:
            new = strat.aggregate(w, uploaded)
        else:
            log.info("round %d: no client uploaded a model; keeping the global model", t)
            new = w.copy()
        strat.end_round(t, w, new, updates)
        return self._finish_round(t, trainers, [u.client_id for u in uploaded],
                                  {u.client_id: u for u in updates}, new, eval_acc)

    def _finish_round(self, t, trainers, participated, updates, new_params, eval_acc, terminal=False):
        n = len(self.clients)
        self.params = new_params
        if not terminal:
            self._val_metrics = self._evaluate_all(new_params)
        moved = self.transport.take_round_bytes()
        record = RoundRecord(
            round=t,
            selected=list(trainers),
            participated=list(participated),
            num_updates=[updates[i].num_updates if i in updates else 0 for i in range(n)],
            batch_sizes=[updates[i].batch_size if i in updates else 0 for i in range(n)],
            eval_accuracy=list(eval_acc),
            val_accuracy=[m.accuracy for m in self._val_metrics],
            val_f1=[m.f1 for m in self._val_metrics],
            bytes_down=[moved.get((i, "down"), 0) for i in range(n)],
            bytes_up=[moved.get((i, "up"), 0) for i in range(n)],
            work_units=int(sum(u.num_updates * u.batch_size for u in updates.values())),
            terminal=terminal,
        )
        self.round += 1
        self.stopped = terminal
        return record


def run_round(state: Coordinator, strategy: Optional[Strategy] = None) -> RoundRecord:
    if strategy is not None and strategy is not state.strategy:
        raise ValueError("strategy does not match the coordinator's strategy")
    return state.run_round()


def run_federation(
    federation: list[ClientDataset],
    strategy: Union[str, Strategy],
    config: Optional[StrategyConfig] = None,
    seed: int = 0,
    round_cap: Optional[int] = None,
    threads: int = 1,
    initial_params: Optional[np.ndarray] = None,
) -> ExperimentResult:
    """Run rounds until ``round_cap`` or, for FLAD, until patience runs out.

    For self-stopping strategies ``round_cap`` is a safety cap (default
    1000). The initial model is ``init_model(seed)`` unless given.
    """
    if not federation:
        raise ValueError("federation needs at least one client")
    config = config or StrategyConfig()
    if isinstance(strategy, str):
        strategy = make_strategy(strategy, config, len(federation), NUM_PARAMS)
    if round_cap is None:
        if not strategy.self_stopping:
            raise ValueError(f"{strategy.name} needs a round cap")
        round_cap = FLAD_SAFETY_CAP
    if round_cap < 1:
        raise ValueError(f"round_cap must be >= 1, got {round_cap}")

    w0 = init_model(seed).params if initial_params is None else np.array(initial_params, dtype=np.float64)
    coord = Coordinator(federation, strategy, seed, w0, threads)
    rounds = []
    try:
        while len(rounds) < round_cap and not coord.stopped:
            rounds.append(coord.run_round())
    finally:
        coord.close()

    final = coord.params
    stop_reason = "flad_patience" if coord.stopped else "round_cap"
    best_round = None
    if strategy.self_stopping and strategy.best_params() is not None:
        best = strategy.best_params()
        best_round = getattr(strategy.state, "best_round", None)
        final_score = float(np.mean(rounds[-1].val_accuracy))
        if coord.stopped or strategy.state.best_mean_accuracy >= final_score:
            final = best
        else:
            best_round = len(rounds)
    test = [evaluate(final, c.test) for c in coord.clients]
    return ExperimentResult(
        strategy=strategy.name,
        config=config.to_dict(),
        seed=seed,
        client_names=[c.attack_name for c in coord.clients],
        rounds=rounds,
        final_params=np.array(final, dtype=np.float64),
        test_metrics=test,
        stop_reason=stop_reason,
        ledger=coord.ledger,
        initial_model_hash=params_hash(w0),
        best_round=best_round,
        client_families=[c.family for c in coord.clients],
    )


COMPARE_ORDER = ("flad", "fedavg", "fedprox", "scaffold", "fedala", "dafl", "fedsbs")


def run_comparison(
    federation: list[ClientDataset],
    seed: int,
    config: Optional[StrategyConfig] = None,
    flad_cap: Optional[int] = None,
    threads: int = 1,
    strategies=COMPARE_ORDER,
) -> dict[str, ExperimentResult]:
    """One seed of the comparison protocol.

    FLAD runs first; its number of training rounds R becomes the round cap
    of every other strategy. All runs start from ``init_model(seed)``.
    """
    names = list(strategies)
    if "flad" not in names:
        raise ValueError("the comparison protocol needs flad to fix the round count")
    names.remove("flad")
    w0 = init_model(seed).params
    results = {"flad": run_federation(federation, "flad", config, seed, flad_cap, threads, w0)}
    rounds = max(1, results["flad"].training_rounds)
    for name in names:
        log.info("seed %d: %s for %d rounds", seed, name, rounds)
        results[name] = run_federation(federation, name, config, seed, rounds, threads, w0)
    return results
