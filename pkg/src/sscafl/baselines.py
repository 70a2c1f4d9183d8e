"""SGD-family comparison algorithms and the momentum-equivalence harness.

Sample-based baselines run E local heavy-ball steps per round and average
models by shard size; feature-based baselines take one global step per round
on a gradient assembled through the same pre-activation exchange the
surrogate rounds use. The harness demonstrates that the unconstrained
surrogate recursion is a momentum-SGD method in disguise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ProtocolError
from .federation import (
    RoundConfig,
    PartitionedDataset,
    RoundMetrics,
    RunResult,
    SAMPLE_MODE,
    build_clients,
    collect_feature_stats,
    evaluate_params,
    make_links,
    _expect,
    _take_block,
    _unpack_broadcast,
)
from .model import (
    AppSurrogateState,
    NnParams,
    batch_stats,
    init_params,
    solve_unconstrained_app,
    update_app_surrogate,
)
from .numerics import INIT_STREAM, SERVER_STREAM, SeededRng, sample_minibatch
from .schedules import StepsizeSchedule
from .wire import MessageKind, RoundMessage, SERVER_SENDER


@dataclass(frozen=True)
class SgdConfig:
    """Baseline hyperparameters: learning rate schedule, E local steps, momentum.

    `local_steps` is the number of mini-batch updates a sample-based client
    runs per round (feature-based baselines always take exactly one global
    step). `momentum` is the heavy-ball coefficient in [0, 1).
    """

    lr: StepsizeSchedule
    local_steps: int = 1
    momentum: float = 0.0

    def __post_init__(self):
        if not isinstance(self.lr, StepsizeSchedule):
            raise ConfigError("lr must be a stepsize schedule")
        if self.local_steps < 1:
            raise ConfigError(f"local_steps must be >= 1, got {self.local_steps}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")


class SgdSampleClient:
    """Runs E local heavy-ball steps per round and returns its local model."""

    def __init__(
        self,
        client_id: int,
        features: np.ndarray,
        labels: np.ndarray,
        batch: int,
        sgd: SgdConfig,
        lam: float,
        rng: SeededRng,
    ):
        self.client_id = int(client_id)
        self.features = np.asarray(features, dtype=float)
        self.labels = np.asarray(labels, dtype=float)
        if self.features.ndim != 2 or self.labels.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features and labels must be 2-D with matching row counts")
        budget = batch * sgd.local_steps
        if not 1 <= batch <= len(self.features) or budget > len(self.features):
            raise ValueError(
                f"local budget batch*E = {budget} must fit the {len(self.features)} local samples"
            )
        self.batch = int(batch)
        self.sgd = sgd
        self.lam = float(lam)
        self.rng = rng
        self._last_round = 0

    def handle(self, msg: RoundMessage) -> list[RoundMessage]:
        if msg.kind != MessageKind.MODEL_BROADCAST:
            raise ProtocolError(
                f"client {self.client_id}: unexpected {msg.kind.name} in the sample flow"
            )
        if msg.round_t != self._last_round + 1:
            raise ProtocolError(
                f"client {self.client_id}: expected round {self._last_round + 1}, got {msg.round_t}"
            )
        params = _unpack_broadcast(
            msg, self.labels.shape[1], self.features.shape[1], f"client {self.client_id}"
        )
        rate = self.sgd.lr.value(msg.round_t)
        # fresh shuffle and momentum buffer each round; E disjoint chunks
        order = self.rng.gen.permutation(len(self.features))
        flat = params.to_flat()
        velocity = np.zeros_like(flat)
        for step in range(self.sgd.local_steps):
            chunk = order[step * self.batch : (step + 1) * self.batch]
            cur = NnParams.from_flat(
                flat, params.l_classes, params.j_hidden, params.p_features
            )
            stats = batch_stats(cur, self.features[chunk], self.labels[chunk])
            grad = stats.stacked_grad() / self.batch + 2.0 * self.lam * flat
            velocity = self.sgd.momentum * velocity + grad
            flat = flat - rate * velocity
        local = NnParams.from_flat(flat, params.l_classes, params.j_hidden, params.p_features)
        self._last_round = msg.round_t
        return [
            RoundMessage(
                MessageKind.MODEL_BROADCAST,
                msg.round_t,
                self.client_id,
                (local.omega0.ravel(), local.omega1.ravel()),
            )
        ]


class SgdServer:
    """Server state for the SGD baselines; shares links and metrics with the
    surrogate sessions but keeps no surrogate accumulators."""

    def __init__(
        self,
        config: RoundConfig,
        dataset: PartitionedDataset,
        master_seed: int,
        warm_start: NnParams | None = None,
    ):
        config.validate_for(dataset)
        if not config.is_sgd:
            raise ConfigError(f"{config.algorithm} is not an sgd baseline")
        self.config = config
        self.dataset = dataset
        self.rng = SeededRng(master_seed, SERVER_STREAM)
        l_classes = dataset.data.l_classes
        p_features = dataset.data.p_features
        if warm_start is not None:
            if warm_start.l_classes != l_classes or warm_start.p_features != p_features:
                raise ConfigError("warm start weights do not match the dataset dimensions")
            self.params = warm_start.copy()
        else:
            self.params = init_params(
                SeededRng(master_seed, INIT_STREAM), l_classes, config.j_hidden, p_features
            )
        # feature-mode global momentum persists across rounds
        self.velocity = np.zeros(self.params.dim)

    def run_round_sample(self, links, t: int) -> None:
        """Broadcast, let clients train locally, and average models by shard size."""
        broadcast = RoundMessage(
            MessageKind.MODEL_BROADCAST,
            t,
            SERVER_SENDER,
            (self.params.omega0.ravel(), self.params.omega1.ravel()),
        )
        for link in links:
            link.send(broadcast)
        shape_a = self.params.omega0.shape
        shape_b = self.params.omega1.shape
        next_omega0 = np.zeros(shape_a)
        next_omega1 = np.zeros(shape_b)
        n_total = self.dataset.data.n_samples
        for i, link in enumerate(links):
            msg = _expect(link, t, MessageKind.MODEL_BROADCAST)
            weight = self.dataset.index_sets[i].size / n_total
            next_omega0 += weight * _take_block(msg, 0, shape_a)
            next_omega1 += weight * _take_block(msg, 1, shape_b)
        self.params = NnParams(next_omega0, next_omega1)

    def run_round_feature(self, links, t: int) -> None:
        """One global heavy-ball step on the exchanged-gradient estimate."""
        cfg = self.config
        idx = sample_minibatch(self.rng, self.dataset.data.n_samples, cfg.batch)
        avg = collect_feature_stats(self.params, self.dataset, links, t, idx, constrained=False)
        flat = self.params.to_flat()
        grad = avg.stacked_grad() + 2.0 * cfg.lam * flat
        self.velocity = cfg.sgd.momentum * self.velocity + grad
        flat = flat - cfg.sgd.lr.value(t) * self.velocity
        self.params = NnParams.from_flat(
            flat, self.params.l_classes, self.params.j_hidden, self.params.p_features
        )

    def run_round(self, links, t: int) -> None:
        if self.config.mode == SAMPLE_MODE:
            self.run_round_sample(links, t)
        else:
            self.run_round_feature(links, t)

    def evaluate(self, round_index: int, test_data) -> RoundMetrics:
        return evaluate_params(
            round_index, self.params, self.config, self.dataset.data, test_data
        )


def run_sgd_session(
    config: RoundConfig,
    dataset: PartitionedDataset,
    test_data,
    master_seed: int,
    transport: str = "in-process",
    warm_start: NnParams | None = None,
) -> RunResult:
    """Drive a full baseline session; mirrors the surrogate session driver."""
    clients = build_clients(config, dataset, master_seed)
    links, closer = make_links(clients, transport)
    try:
        server = SgdServer(config, dataset, master_seed, warm_start)
        metrics = []
        for t in range(1, config.rounds + 1):
            server.run_round(links, t)
            metrics.append(server.evaluate(t, test_data))
    finally:
        closer()
    return RunResult(metrics, server.params)


def momentum_velocity_step(
    velocity: np.ndarray, rho_t: float, gamma_prev: float, grad: np.ndarray, tau: float
) -> np.ndarray:
    """One velocity update of the momentum form of the surrogate recursion.

    v_t = (1 - rho_t) (1 - gamma_{t-1}) v_{t-1} + (rho_t / (2 tau)) g_t;
    linear in 1/(2 tau) for a fixed gradient stream.
    """
    return (1.0 - rho_t) * (1.0 - gamma_prev) * velocity + (rho_t / (2.0 * tau)) * grad


def ssca_momentum_equivalence(
    params0: NnParams,
    batches,
    rho: StepsizeSchedule,
    gamma: StepsizeSchedule,
    tau: float,
    lam: float = 0.0,
) -> float:
    """Max trajectory gap between the surrogate recursion and its momentum form.

    Both recursions consume the same batch sequence [(z_1, y_1), ...], each
    evaluating gradients at its own iterate, and both treat the first round
    as a full overwrite of the empty state (the velocity starts at zero with
    a zero previous stepsize). Returns max over rounds of the max-norm gap.
    """
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    if lam < 0.0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    surrogate_params = params0.copy()
    state = AppSurrogateState.zeros(params0.l_classes, params0.j_hidden, params0.p_features)
    flat = params0.to_flat()
    velocity = np.zeros_like(flat)
    worst = 0.0
    for t, (z_batch, y_batch) in enumerate(batches, start=1):
        rho_t = 1.0 if t == 1 else rho.value(t)
        gamma_t = gamma.value(t)
        gamma_prev = 0.0 if t == 1 else gamma.value(t - 1)

        avg = batch_stats(surrogate_params, z_batch, y_batch).scaled(1.0 / len(z_batch))
        state = update_app_surrogate(state, rho_t, tau, surrogate_params, avg)
        target = solve_unconstrained_app(state, lam, tau)
        surrogate_params = NnParams(
            (1.0 - gamma_t) * surrogate_params.omega0 + gamma_t * target.omega0,
            (1.0 - gamma_t) * surrogate_params.omega1 + gamma_t * target.omega1,
        )

        momentum_params = NnParams.from_flat(
            flat, params0.l_classes, params0.j_hidden, params0.p_features
        )
        grad = batch_stats(momentum_params, z_batch, y_batch).stacked_grad() / len(z_batch)
        grad = grad + 2.0 * lam * flat
        velocity = momentum_velocity_step(velocity, rho_t, gamma_prev, grad, tau)
        flat = flat - gamma_t * velocity

        gap = float(np.max(np.abs(surrogate_params.to_flat() - flat)))
        worst = max(worst, gap)
    return worst
