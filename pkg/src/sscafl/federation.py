"""Federated round orchestration: roles, transports, and the session driver.

The server owns the model and its surrogate accumulators; clients own raw
data and answer with summed statistics. One round is a fixed synchronous
exchange (broadcast, local work, aggregation in client-id order, closed-form
solve, convex-combination step). Every cross-role value travels as an encoded
frame whether the link is in-process or a socket, so the transport cannot
change a single bit of the math.
"""

from __future__ import annotations

import socket
import threading
from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .data import RawDataset, partition_features, partition_samples
from .errors import ConfigError, DecodeError, ProtocolError, RoundAbortError, SscaflError
from .model import (
    AppSurrogateState,
    NnParams,
    SampleStats,
    accuracy,
    batch_stats,
    init_params,
    loss,
    regularized_loss,
    solve_constrained_app,
    solve_unconstrained_app,
    stats_from_pre,
    update_app_surrogate,
)
from .numerics import INIT_STREAM, SERVER_STREAM, SeededRng, sample_minibatch
from .schedules import StepsizeSchedule
from .wire import (
    MAGIC,
    SERVER_SENDER,
    MessageKind,
    RoundMessage,
    decode_message,
    encode_message,
    read_exact,
    read_frame_from,
)

if TYPE_CHECKING:
    from .baselines import SgdConfig

SAMPLE_MODE = "sample-based"
FEATURE_MODE = "feature-based"

ALGORITHMS = (
    "ssca-sample-uncon",
    "ssca-sample-con",
    "ssca-feature-uncon",
    "ssca-feature-con",
    "sgd-sample",
    "sgdm-sample",
    "sgd-feature",
    "sgdm-feature",
)


@dataclass
class PartitionedDataset:
    """A dataset split across clients by rows (sample mode) or columns (feature mode).

    In feature mode every client additionally sees all labels; only the
    feature columns are private to a client.
    """

    mode: str
    data: RawDataset
    index_sets: list

    def __post_init__(self):
        if self.mode not in (SAMPLE_MODE, FEATURE_MODE):
            raise ValueError(f"mode must be {SAMPLE_MODE!r} or {FEATURE_MODE!r}, got {self.mode!r}")
        if not self.index_sets:
            raise ValueError("at least one client index set is required")
        total = self.data.n_samples if self.mode == SAMPLE_MODE else self.data.p_features
        sets = []
        for k, raw in enumerate(self.index_sets):
            idx = np.asarray(raw, dtype=np.int64)
            if idx.ndim != 1 or idx.size == 0:
                raise ValueError(f"client {k} index set must be a nonempty 1-D array")
            sets.append(idx)
        merged = np.concatenate(sets)
        if merged.size != total or not np.array_equal(np.sort(merged), np.arange(total)):
            axis = "samples" if self.mode == SAMPLE_MODE else "feature columns"
            raise ValueError(f"index sets must partition the {total} {axis} exactly")
        self.index_sets = sets

    @property
    def n_clients(self) -> int:
        return len(self.index_sets)

    @classmethod
    def by_samples(cls, data: RawDataset, n_clients: int, sizes=None) -> "PartitionedDataset":
        """Contiguous row shards, balanced unless explicit sizes are given."""
        return cls(SAMPLE_MODE, data, partition_samples(data.n_samples, n_clients, sizes))

    @classmethod
    def by_features(cls, data: RawDataset, n_clients: int) -> "PartitionedDataset":
        """Contiguous balanced column blocks."""
        return cls(FEATURE_MODE, data, partition_features(data.p_features, n_clients))


@dataclass
class RoundConfig:
    """Everything a session needs beyond the dataset and the seed."""

    algorithm: str
    batch: int
    rounds: int
    tau: float
    rho: StepsizeSchedule
    gamma: StepsizeSchedule
    lam: float = 0.0
    ubound: float | None = None
    penalty: float = 1e5
    j_hidden: int = 16
    sgd: "SgdConfig | None" = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose one of {ALGORITHMS}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if not self.tau > 0.0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.lam < 0.0:
            raise ConfigError(f"lam must be nonnegative, got {self.lam}")
        if self.j_hidden < 1:
            raise ConfigError(f"j_hidden must be >= 1, got {self.j_hidden}")
        if self.constrained:
            if self.ubound is None:
                raise ConfigError(f"{self.algorithm} requires an upper bound (ubound)")
            if not self.penalty > 0.0:
                raise ConfigError(f"penalty must be positive, got {self.penalty}")
        if self.is_sgd and self.sgd is None:
            raise ConfigError(f"{self.algorithm} requires an sgd configuration")
        # power-decay stepsizes peak at t=1, so probing the first round
        # catches any out-of-range coefficient before a session starts
        probes = [("rho", self.rho), ("gamma", self.gamma)]
        if self.sgd is not None:
            probes.append(("baseline lr", self.sgd.lr))
        for name, schedule in probes:
            try:
                schedule.value(1)
            except ValueError as exc:
                raise ConfigError(f"{name} schedule: {exc}") from None

    @property
    def mode(self) -> str:
        return FEATURE_MODE if "feature" in self.algorithm else SAMPLE_MODE

    @property
    def constrained(self) -> bool:
        return self.algorithm.endswith("-con")

    @property
    def is_sgd(self) -> bool:
        return self.algorithm.startswith("sgd")

    def validate_for(self, dataset: PartitionedDataset) -> None:
        """Check the config against a concrete partition; raises ConfigError."""
        if dataset.mode != self.mode:
            raise ConfigError(
                f"{self.algorithm} needs a {self.mode} partition, got {dataset.mode}"
            )
        if self.mode == SAMPLE_MODE:
            smallest = min(idx.size for idx in dataset.index_sets)
            if self.batch > smallest:
                raise ConfigError(
                    f"batch {self.batch} exceeds the smallest client shard ({smallest} samples)"
                )
            if self.is_sgd:
                budget = self.batch * self.sgd.local_steps
                if budget > smallest:
                    raise ConfigError(
                        f"local budget batch*E = {budget} exceeds the smallest client shard ({smallest} samples)"
                    )
        elif self.batch > dataset.data.n_samples:
            raise ConfigError(
                f"batch {self.batch} exceeds the dataset size ({dataset.data.n_samples} samples)"
            )


@dataclass
class RoundMetrics:
    """Observer-side measurements after a round; fields mirror the CSV columns.

    `training_cost` and `test_accuracy` describe the post-round weights;
    `slack` is the subproblem slack of the round itself (constrained runs).
    """

    round: int
    training_cost: float
    test_accuracy: float
    l2_norm: float
    constraint_value: float | None = None
    slack: float | None = None


def evaluate_params(
    round_index: int,
    params: NnParams,
    config: RoundConfig,
    train_data: RawDataset,
    test_data: RawDataset,
    slack: float | None = None,
) -> RoundMetrics:
    """Full-dataset metrics for one row of the run log."""
    flat = params.to_flat()
    l2 = float(flat @ flat)
    acc = accuracy(params, test_data.features, test_data.labels)
    if config.constrained:
        ce = loss(params, train_data.features, train_data.labels)
        return RoundMetrics(round_index, ce, acc, l2, ce - config.ubound, slack)
    cost = regularized_loss(params, train_data.features, train_data.labels, config.lam)
    return RoundMetrics(round_index, cost, acc, l2)


def _unpack_broadcast(msg: RoundMessage, l_classes: int, p_features: int, who: str) -> NnParams:
    """Reshape a two-block weight broadcast; ProtocolError on any size mismatch."""
    if len(msg.payload) != 2:
        raise ProtocolError(f"{who}: broadcast must carry two weight blocks, got {len(msg.payload)}")
    flat0, flat1 = msg.payload
    if flat0.size % l_classes:
        raise ProtocolError(
            f"{who}: output block of {flat0.size} does not split over {l_classes} classes"
        )
    j_hidden = flat0.size // l_classes
    if flat1.size != j_hidden * p_features:
        raise ProtocolError(
            f"{who}: hidden block must hold {j_hidden * p_features} reals, got {flat1.size}"
        )
    return NnParams(flat0.reshape(l_classes, j_hidden), flat1.reshape(j_hidden, p_features))


def _expect(link, t: int, kind: MessageKind) -> RoundMessage:
    """Receive one frame, demanding the given kind at the given round."""
    try:
        msg = link.recv()
    except (DecodeError, OSError) as exc:
        raise RoundAbortError(f"no reply from client {link.client_id}: {exc}", t) from exc
    if msg.kind != kind:
        raise ProtocolError(f"client {link.client_id}: expected {kind.name}, got {msg.kind.name}")
    if msg.round_t != t:
        raise ProtocolError(f"client {link.client_id}: reply for round {msg.round_t} during round {t}")
    return msg


def _take_block(msg: RoundMessage, k: int, shape: tuple) -> np.ndarray:
    wanted = int(np.prod(shape))
    if k >= len(msg.payload) or msg.payload[k].size != wanted:
        raise ProtocolError(
            f"client {msg.sender}: {msg.kind.name} sequence {k} must hold {wanted} reals"
        )
    return msg.payload[k].reshape(shape)


class SscaSampleClient:
    """Holds a horizontal shard; answers each broadcast with summed statistics."""

    def __init__(
        self,
        client_id: int,
        features: np.ndarray,
        labels: np.ndarray,
        batch: int,
        constrained: bool,
        rng: SeededRng,
    ):
        self.client_id = int(client_id)
        self.features = np.asarray(features, dtype=float)
        self.labels = np.asarray(labels, dtype=float)
        if self.features.ndim != 2 or self.labels.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features and labels must be 2-D with matching row counts")
        if not 1 <= batch <= len(self.features):
            raise ValueError(f"batch must be in [1, {len(self.features)}], got {batch}")
        self.batch = int(batch)
        self.constrained = bool(constrained)
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
        idx = sample_minibatch(self.rng, len(self.features), self.batch)
        stats = batch_stats(params, self.features[idx], self.labels[idx])
        self._last_round = msg.round_t
        if self.constrained:
            payload = (stats.a_bar.ravel(), stats.b_bar.ravel(), np.array([stats.c_bar]))
            return [RoundMessage(MessageKind.Q_CONSTRAINT, msg.round_t, self.client_id, payload)]
        payload = (stats.a_bar.ravel(), stats.b_bar.ravel())
        return [RoundMessage(MessageKind.Q_OBJECTIVE, msg.round_t, self.client_id, payload)]


class FeatureClient:
    """Holds a vertical feature block of every sample, plus the shared labels.

    Per round: learn the batch, contribute partial pre-activations, sum the
    relayed contributions of all clients, then report its own b-statistic
    block (and, for the aggregator, the a-statistic and log-likelihood).
    """

    def __init__(
        self,
        client_id: int,
        feature_block: np.ndarray,
        labels: np.ndarray,
        n_clients: int,
        aggregator: bool,
        constrained: bool,
    ):
        self.client_id = int(client_id)
        self.block = np.asarray(feature_block, dtype=float)
        self.labels = np.asarray(labels, dtype=float)
        if self.block.ndim != 2 or self.labels.ndim != 2 or len(self.block) != len(self.labels):
            raise ValueError("feature block and labels must be 2-D with matching row counts")
        if n_clients < 1:
            raise ValueError(f"n_clients must be >= 1, got {n_clients}")
        self.n_clients = int(n_clients)
        self.aggregator = bool(aggregator)
        self.constrained = bool(constrained)
        self._last_round = 0
        self._phase = "announce"
        self._idx = None
        self._omega0 = None
        self._pre = None
        self._h_seen = 0

    def _fail(self, why: str):
        raise ProtocolError(f"client {self.client_id}: {why}")

    def _on_announce(self, msg: RoundMessage) -> list[RoundMessage]:
        if msg.round_t != self._last_round + 1:
            self._fail(f"expected round {self._last_round + 1}, got {msg.round_t}")
        if not msg.payload or msg.payload[0].size == 0:
            self._fail("empty batch announcement")
        idx = msg.payload[0].astype(np.int64)
        if idx.max() >= len(self.block):
            self._fail(f"batch index {idx.max()} outside the {len(self.block)} samples")
        self._idx = idx
        self._phase = "model"
        return []

    def _on_model(self, msg: RoundMessage) -> list[RoundMessage]:
        if len(msg.payload) != 2:
            self._fail(f"broadcast must carry two weight blocks, got {len(msg.payload)}")
        flat0, flat1 = msg.payload
        l_classes = self.labels.shape[1]
        if flat0.size % l_classes:
            self._fail(f"output block of {flat0.size} does not split over {l_classes} classes")
        j_hidden = flat0.size // l_classes
        p_local = self.block.shape[1]
        if flat1.size != j_hidden * p_local:
            self._fail(f"hidden block must hold {j_hidden * p_local} reals, got {flat1.size}")
        self._omega0 = flat0.reshape(l_classes, j_hidden)
        omega1_block = flat1.reshape(j_hidden, p_local)
        h_part = self.block[self._idx] @ omega1_block.T
        self._pre = np.zeros_like(h_part)
        self._h_seen = 0
        self._phase = "exchange"
        return [RoundMessage(MessageKind.H_EXCHANGE, msg.round_t, self.client_id, (h_part.ravel(),))]

    def _on_exchange(self, msg: RoundMessage) -> list[RoundMessage]:
        if len(msg.payload) != 1 or msg.payload[0].size != self._pre.size:
            self._fail(f"partial pre-activations must hold {self._pre.size} reals")
        self._pre = self._pre + msg.payload[0].reshape(self._pre.shape)
        self._h_seen += 1
        if self._h_seen < self.n_clients:
            return []
        self._last_round = msg.round_t
        self._phase = "announce"
        a_sum, gate, c_sum = stats_from_pre(self._omega0, self._pre, self.labels[self._idx])
        b_block = gate.T @ self.block[self._idx]
        out = []
        if self.aggregator:
            seqs = (a_sum.ravel(), np.array([c_sum])) if self.constrained else (a_sum.ravel(),)
            out.append(RoundMessage(MessageKind.Q_AGGREGATE, msg.round_t, self.client_id, seqs))
        out.append(RoundMessage(MessageKind.Q_OBJECTIVE, msg.round_t, self.client_id, (b_block.ravel(),)))
        return out

    def handle(self, msg: RoundMessage) -> list[RoundMessage]:
        expected = {
            "announce": MessageKind.BATCH_ANNOUNCE,
            "model": MessageKind.MODEL_BROADCAST,
            "exchange": MessageKind.H_EXCHANGE,
        }[self._phase]
        if msg.kind != expected:
            self._fail(f"expected {expected.name} in phase {self._phase!r}, got {msg.kind.name}")
        if self._phase != "announce" and msg.round_t != self._last_round + 1:
            self._fail(f"expected round {self._last_round + 1}, got {msg.round_t}")
        if self._phase == "announce":
            return self._on_announce(msg)
        if self._phase == "model":
            return self._on_model(msg)
        return self._on_exchange(msg)


class InProcessLink:
    """Frame queue to a client object in the calling thread.

    Frames are still encoded and decoded on both legs, so anything that
    cannot survive the wire cannot survive this link either.
    """

    def __init__(self, client):
        self.client = client
        self.client_id = client.client_id
        self._replies = deque()

    def send(self, msg: RoundMessage) -> None:
        for reply in self.client.handle(decode_message(encode_message(msg))):
            self._replies.append(encode_message(reply))

    def recv(self) -> RoundMessage:
        if not self._replies:
            raise DecodeError("no pending frame from the client", 0)
        return decode_message(self._replies.popleft())

    def close(self) -> None:
        pass


class SocketLink:
    """Server-side handle on one TCP connection to a client."""

    def __init__(self, conn: socket.socket, client_id: int):
        self.conn = conn
        self.client_id = client_id

    def send(self, msg: RoundMessage) -> None:
        self.conn.sendall(encode_message(msg))

    def recv(self) -> RoundMessage:
        return read_frame_from(self.conn)

    def close(self) -> None:
        try:
            self.conn.close()
        except OSError:
            pass


def _client_worker(host: str, port: int, client) -> None:
    # errors surface at the server as an aborted round when the stream closes
    conn = socket.create_connection((host, port))
    try:
        hello = RoundMessage(MessageKind.BATCH_ANNOUNCE, 0, client.client_id, ())
        conn.sendall(MAGIC + encode_message(hello))
        if read_exact(conn, len(MAGIC)) != MAGIC:
            return
        while True:
            try:
                msg = read_frame_from(conn)
            except DecodeError:
                return
            for reply in client.handle(msg):
                conn.sendall(encode_message(reply))
    except (SscaflError, OSError):
        return
    finally:
        conn.close()


def socket_links(clients, host: str = "127.0.0.1"):
    """Connect each client over TCP loopback in its own thread.

    Each direction of a connection starts with the magic preamble; the
    client then identifies itself with a round-0 empty batch announcement.
    Returns the links in client order plus the worker threads.
    """
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        listener.bind((host, 0))
        listener.listen(len(clients))
        port = listener.getsockname()[1]
        threads = [
            threading.Thread(target=_client_worker, args=(host, port, c), daemon=True)
            for c in clients
        ]
        for thread in threads:
            thread.start()
        by_id = {}
        for _ in clients:
            conn, _addr = listener.accept()
            if read_exact(conn, len(MAGIC)) != MAGIC:
                raise DecodeError("bad connection preamble", 0)
            hello = read_frame_from(conn)
            if hello.kind != MessageKind.BATCH_ANNOUNCE or hello.round_t != 0:
                raise ProtocolError(f"expected a hello frame, got {hello.kind.name} round {hello.round_t}")
            conn.sendall(MAGIC)
            by_id[hello.sender] = SocketLink(conn, hello.sender)
    finally:
        listener.close()
    missing = [c.client_id for c in clients if c.client_id not in by_id]
    if missing:
        raise ProtocolError(f"clients {missing} never connected")
    return [by_id[c.client_id] for c in clients], threads


def make_links(clients, transport: str):
    """Build one link per client; returns (links, closer)."""
    if transport == "in-process":
        links = [InProcessLink(c) for c in clients]
        return links, lambda: None
    if transport == "socket":
        links, threads = socket_links(clients)

        def closer():
            for link in links:
                link.close()
            for thread in threads:
                thread.join(timeout=5.0)

        return links, closer
    raise ConfigError(f"unknown transport {transport!r}; choose 'in-process' or 'socket'")


def build_clients(config: RoundConfig, dataset: PartitionedDataset, master_seed: int) -> list:
    """Instantiate the client roles for one session."""
    data = dataset.data
    if config.mode == SAMPLE_MODE:
        if config.is_sgd:
            from .baselines import SgdSampleClient

            return [
                SgdSampleClient(
                    i,
                    data.features[rows],
                    data.labels[rows],
                    config.batch,
                    config.sgd,
                    config.lam,
                    SeededRng(master_seed, i),
                )
                for i, rows in enumerate(dataset.index_sets)
            ]
        return [
            SscaSampleClient(
                i,
                data.features[rows],
                data.labels[rows],
                config.batch,
                config.constrained,
                SeededRng(master_seed, i),
            )
            for i, rows in enumerate(dataset.index_sets)
        ]
    return [
        FeatureClient(
            i,
            data.features[:, cols],
            data.labels,
            dataset.n_clients,
            aggregator=(i == 0),
            constrained=config.constrained,
        )
        for i, cols in enumerate(dataset.index_sets)
    ]


def collect_feature_stats(
    params: NnParams,
    dataset: PartitionedDataset,
    links,
    t: int,
    idx: np.ndarray,
    constrained: bool,
) -> SampleStats:
    """Gather batch-averaged statistics over a vertical partition.

    Announces the batch and the per-client weight blocks, relays every
    client's partial pre-activations to every client in id order, then
    collects the aggregator's a-statistic (plus log-likelihood when
    constrained) and each client's b-block. Shared by the surrogate and SGD
    feature rounds, which differ only in what they do with the averages.
    """
    announce = RoundMessage(MessageKind.BATCH_ANNOUNCE, t, SERVER_SENDER, (idx,))
    for i, link in enumerate(links):
        block = params.omega1[:, dataset.index_sets[i]]
        link.send(announce)
        link.send(
            RoundMessage(
                MessageKind.MODEL_BROADCAST,
                t,
                SERVER_SENDER,
                (params.omega0.ravel(), block.ravel()),
            )
        )
    h_frames = [_expect(link, t, MessageKind.H_EXCHANGE) for link in links]
    for link in links:
        for frame in h_frames:
            link.send(frame)
    agg = _expect(links[0], t, MessageKind.Q_AGGREGATE)
    total_a = _take_block(agg, 0, params.omega0.shape)
    total_c = float(_take_block(agg, 1, (1,))[0]) if constrained else 0.0
    total_b = np.empty_like(params.omega1)
    for i, link in enumerate(links):
        cols = dataset.index_sets[i]
        msg = _expect(link, t, MessageKind.Q_OBJECTIVE)
        total_b[:, cols] = _take_block(msg, 0, (params.j_hidden, cols.size))
    batch = idx.size
    return SampleStats(total_a / batch, total_b / batch, total_c / batch)


class Server:
    """Owns the weights and surrogate accumulators; drives rounds over links."""

    def __init__(
        self,
        config: RoundConfig,
        dataset: PartitionedDataset,
        master_seed: int,
        warm_start: NnParams | None = None,
    ):
        config.validate_for(dataset)
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
        self.state = AppSurrogateState.zeros(l_classes, self.params.j_hidden, p_features)

    def _rho(self, t: int) -> float:
        # the first update must fully overwrite the empty accumulators
        return 1.0 if self.state.round == 0 else self.config.rho.value(t)

    def _advance(self, t: int, avg_stats: SampleStats) -> float | None:
        cfg = self.config
        self.state = update_app_surrogate(self.state, self._rho(t), cfg.tau, self.params, avg_stats)
        if cfg.constrained:
            target, result = solve_constrained_app(self.state, cfg.ubound, cfg.tau, cfg.penalty)
            slack = float(result.s[0])
        else:
            target = solve_unconstrained_app(self.state, cfg.lam, cfg.tau)
            slack = None
        gamma = cfg.gamma.value(t)
        self.params = NnParams(
            (1.0 - gamma) * self.params.omega0 + gamma * target.omega0,
            (1.0 - gamma) * self.params.omega1 + gamma * target.omega1,
        )
        return slack

    def run_round_sample(self, links, t: int) -> float | None:
        """One horizontal round; returns the subproblem slack when constrained."""
        cfg = self.config
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
        total_a = np.zeros(shape_a)
        total_b = np.zeros(shape_b)
        total_c = 0.0
        n_total = self.dataset.data.n_samples
        reply_kind = MessageKind.Q_CONSTRAINT if cfg.constrained else MessageKind.Q_OBJECTIVE
        for i, link in enumerate(links):
            msg = _expect(link, t, reply_kind)
            weight = self.dataset.index_sets[i].size / (cfg.batch * n_total)
            total_a += weight * _take_block(msg, 0, shape_a)
            total_b += weight * _take_block(msg, 1, shape_b)
            if cfg.constrained:
                total_c += weight * float(_take_block(msg, 2, (1,))[0])
        return self._advance(t, SampleStats(total_a, total_b, total_c))

    def run_round_feature(self, links, t: int) -> float | None:
        """One vertical round; the server relays the pre-activation exchange."""
        cfg = self.config
        idx = sample_minibatch(self.rng, self.dataset.data.n_samples, cfg.batch)
        avg = collect_feature_stats(self.params, self.dataset, links, t, idx, cfg.constrained)
        return self._advance(t, avg)

    def run_round(self, links, t: int) -> float | None:
        if self.config.mode == SAMPLE_MODE:
            return self.run_round_sample(links, t)
        return self.run_round_feature(links, t)

    def evaluate(self, round_index: int, test_data: RawDataset, slack: float | None) -> RoundMetrics:
        return evaluate_params(
            round_index, self.params, self.config, self.dataset.data, test_data, slack
        )


@dataclass
class RunResult:
    """Per-round metrics and the final weights of one session."""

    metrics: list
    params: NnParams

    @property
    def final(self) -> RoundMetrics:
        return self.metrics[-1]


def run_session(
    config: RoundConfig,
    dataset: PartitionedDataset,
    test_data: RawDataset,
    master_seed: int,
    transport: str = "in-process",
    warm_start: NnParams | None = None,
) -> RunResult:
    """Drive a full multi-round session and collect metrics after every round."""
    config.validate_for(dataset)
    if config.is_sgd:
        from .baselines import run_sgd_session

        return run_sgd_session(config, dataset, test_data, master_seed, transport, warm_start)
    clients = build_clients(config, dataset, master_seed)
    links, closer = make_links(clients, transport)
    try:
        server = Server(config, dataset, master_seed, warm_start)
        metrics = []
        for t in range(1, config.rounds + 1):
            slack = server.run_round(links, t)
            metrics.append(server.evaluate(t, test_data, slack))
    finally:
        closer()
    return RunResult(metrics, server.params)


def run_penalty_stages(
    config: RoundConfig,
    dataset: PartitionedDataset,
    test_data: RawDataset,
    master_seed: int,
    penalties,
    transport: str = "in-process",
) -> list[RunResult]:
    """Constrained sessions with an increasing penalty sequence.

    Stage j runs the full round budget at penalties[j], warm-started at the
    previous stage's final weights with fresh surrogate accumulators; stage j
    uses master_seed + j so batches do not repeat across stages.
    """
    if not config.constrained:
        raise ConfigError("penalty stages apply to constrained algorithms only")
    penalties = [float(c) for c in penalties]
    if not penalties or any(c <= 0.0 for c in penalties):
        raise ConfigError("penalties must be a nonempty sequence of positive values")
    if any(b > a for a, b in zip(penalties[1:], penalties)):
        raise ConfigError("penalties must be nondecreasing")
    results = []
    warm = None
    for stage, penalty_c in enumerate(penalties):
        stage_config = RoundConfig(
            algorithm=config.algorithm,
            batch=config.batch,
            rounds=config.rounds,
            tau=config.tau,
            rho=config.rho,
            gamma=config.gamma,
            lam=config.lam,
            ubound=config.ubound,
            penalty=penalty_c,
            j_hidden=config.j_hidden,
            sgd=config.sgd,
        )
        result = run_session(
            stage_config, dataset, test_data, master_seed + stage, transport, warm_start=warm
        )
        results.append(result)
        warm = result.params
    return results
