"""Round orchestration: roles, aggregation identities, transports, failure paths."""

import numpy as np
import pytest

from sscafl.data import partition_features, synth_dataset
from sscafl.errors import ConfigError, DecodeError, ProtocolError, RoundAbortError
from sscafl.federation import (
    ALGORITHMS,
    FEATURE_MODE,
    SAMPLE_MODE,
    FeatureClient,
    InProcessLink,
    PartitionedDataset,
    RoundConfig,
    Server,
    build_clients,
    run_penalty_stages,
    run_session,
)
from sscafl.model import batch_stats, init_params
from sscafl.numerics import INIT_STREAM, SeededRng
from sscafl.schedules import constant, power_decay
from sscafl.wire import SERVER_SENDER, MessageKind, RoundMessage

SEED = 11


@pytest.fixture(scope="module")
def small_data():
    return synth_dataset(7, 120, 8, 3, 4.0)


def uncon_config(**overrides):
    base = dict(
        algorithm="ssca-sample-uncon",
        batch=20,
        rounds=4,
        tau=0.5,
        rho=power_decay(0.9, 0.1),
        gamma=power_decay(0.5, 0.2),
        lam=1e-4,
        j_hidden=6,
    )
    base.update(overrides)
    return RoundConfig(**base)


class TestPartitionedDataset:
    def test_by_samples_covers_all_rows(self, small_data):
        train, _ = small_data
        ds = PartitionedDataset.by_samples(train, 3)
        assert ds.n_clients == 3
        assert [s.size for s in ds.index_sets] == [40, 40, 40]
        merged = np.sort(np.concatenate(ds.index_sets))
        assert np.array_equal(merged, np.arange(120))

    def test_by_features_covers_all_columns(self, small_data):
        train, _ = small_data
        ds = PartitionedDataset.by_features(train, 3)
        assert [s.size for s in ds.index_sets] == [3, 3, 2]
        merged = np.sort(np.concatenate(ds.index_sets))
        assert np.array_equal(merged, np.arange(8))

    def test_overlap_rejected(self, small_data):
        train, _ = small_data
        sets = [np.arange(60), np.arange(59, 120)]
        with pytest.raises(ValueError, match="partition"):
            PartitionedDataset(SAMPLE_MODE, train, sets)

    def test_gap_rejected(self, small_data):
        train, _ = small_data
        sets = [np.arange(60), np.arange(61, 120)]
        with pytest.raises(ValueError, match="partition"):
            PartitionedDataset(SAMPLE_MODE, train, sets)

    def test_empty_client_rejected(self, small_data):
        train, _ = small_data
        with pytest.raises(ValueError, match="nonempty"):
            PartitionedDataset(SAMPLE_MODE, train, [np.arange(120), np.arange(0)])
        with pytest.raises(ValueError, match="at least one"):
            PartitionedDataset(SAMPLE_MODE, train, [])

    def test_unknown_mode_rejected(self, small_data):
        train, _ = small_data
        with pytest.raises(ValueError, match="mode"):
            PartitionedDataset("diagonal", train, [np.arange(120)])


class TestRoundConfig:
    def test_algorithm_families(self):
        for name in ALGORITHMS:
            mode = FEATURE_MODE if "feature" in name else SAMPLE_MODE
            cfg = RoundConfig.__new__(RoundConfig)
            cfg.algorithm = name
            assert cfg.mode == mode
            assert cfg.constrained == name.endswith("-con")
            assert cfg.is_sgd == name.startswith("sgd")

    def test_rejections(self):
        with pytest.raises(ConfigError, match="unknown algorithm"):
            uncon_config(algorithm="ssca-diagonal")
        with pytest.raises(ConfigError, match="batch"):
            uncon_config(batch=0)
        with pytest.raises(ConfigError, match="rounds"):
            uncon_config(rounds=0)
        with pytest.raises(ConfigError, match="tau"):
            uncon_config(tau=0.0)
        with pytest.raises(ConfigError, match="lam"):
            uncon_config(lam=-1.0)
        with pytest.raises(ConfigError, match="ubound"):
            uncon_config(algorithm="ssca-sample-con")
        with pytest.raises(ConfigError, match="penalty"):
            uncon_config(algorithm="ssca-sample-con", ubound=1.0, penalty=0.0)
        with pytest.raises(ConfigError, match="sgd configuration"):
            uncon_config(algorithm="sgd-sample")

    def test_validate_for_mode_and_batch(self, small_data):
        train, _ = small_data
        rows = PartitionedDataset.by_samples(train, 3)
        cols = PartitionedDataset.by_features(train, 3)
        with pytest.raises(ConfigError, match="partition"):
            uncon_config().validate_for(cols)
        with pytest.raises(ConfigError, match="smallest client shard"):
            uncon_config(batch=41).validate_for(rows)
        with pytest.raises(ConfigError, match="dataset size"):
            uncon_config(algorithm="ssca-feature-uncon", batch=121).validate_for(cols)
        uncon_config(batch=40).validate_for(rows)
        uncon_config(algorithm="ssca-feature-uncon", batch=120).validate_for(cols)


class TestSampleRounds:
    def test_single_client_full_batch_is_gradient_step(self, small_data):
        train, _ = small_data
        cfg = uncon_config(batch=120, rounds=3, rho=constant(1.0), gamma=power_decay(0.5, 0.6), lam=0.0)
        ds = PartitionedDataset.by_samples(train, 1)
        clients = build_clients(cfg, ds, SEED)
        links = [InProcessLink(c) for c in clients]
        server = Server(cfg, ds, SEED)
        for t in range(1, cfg.rounds + 1):
            flat = server.params.to_flat()
            grad = batch_stats(server.params, train.features, train.labels).stacked_grad() / 120.0
            gamma_t = cfg.gamma.value(t)
            expected = flat - (gamma_t / (2.0 * cfg.tau)) * grad
            server.run_round_sample(links, t)
            np.testing.assert_allclose(server.params.to_flat(), expected, rtol=0, atol=1e-12)

    def test_two_half_shards_match_single_client(self, small_data):
        train, test = small_data
        one = run_session(
            uncon_config(batch=120, rounds=5), PartitionedDataset.by_samples(train, 1), test, SEED
        )
        two = run_session(
            uncon_config(batch=60, rounds=5), PartitionedDataset.by_samples(train, 2), test, SEED
        )
        np.testing.assert_allclose(two.params.to_flat(), one.params.to_flat(), rtol=0, atol=1e-10)
        for m_two, m_one in zip(two.metrics, one.metrics):
            assert m_two.training_cost == pytest.approx(m_one.training_cost, abs=1e-10)

    def test_loose_ubound_contracts_weights_geometrically(self, small_data):
        # with a never-binding bound the minimum-norm target is exactly zero,
        # so each round only shrinks the iterate by its convex-combination step
        train, test = small_data
        cfg = uncon_config(
            algorithm="ssca-sample-con", batch=30, rounds=4, lam=0.0, ubound=1e6, penalty=1e5
        )
        ds = PartitionedDataset.by_samples(train, 2)
        result = run_session(cfg, ds, test, SEED)
        assert [m.slack for m in result.metrics] == [0.0] * cfg.rounds
        assert all(m.constraint_value < 0.0 for m in result.metrics)
        l2 = [m.l2_norm for m in result.metrics]
        assert all(b < a for a, b in zip(l2, l2[1:]))
        init = init_params(SeededRng(SEED, INIT_STREAM), 3, cfg.j_hidden, 8)
        factor = np.prod([1.0 - cfg.gamma.value(t) for t in range(1, cfg.rounds + 1)])
        np.testing.assert_allclose(
            result.params.to_flat(), factor * init.to_flat(), rtol=1e-12, atol=1e-16
        )


class TestFeatureRounds:
    def test_h_exchange_reconstructs_pre_activations(self, small_data):
        train, _ = small_data
        col_sets = partition_features(8, 3)
        clients = [
            FeatureClient(i, train.features[:, cols], train.labels, 3, i == 0, True)
            for i, cols in enumerate(col_sets)
        ]
        params = init_params(SeededRng(5, INIT_STREAM), 3, 6, 8)
        idx = np.arange(17, 47)
        announce = RoundMessage(MessageKind.BATCH_ANNOUNCE, 1, SERVER_SENDER, (idx,))
        h_frames = []
        for client, cols in zip(clients, col_sets):
            assert client.handle(announce) == []
            model = RoundMessage(
                MessageKind.MODEL_BROADCAST,
                1,
                SERVER_SENDER,
                (params.omega0.ravel(), params.omega1[:, cols].ravel()),
            )
            (frame,) = client.handle(model)
            assert frame.kind == MessageKind.H_EXCHANGE
            h_frames.append(frame)

        pre_sum = sum(frame.payload[0].reshape(30, 6) for frame in h_frames)
        np.testing.assert_allclose(
            pre_sum, train.features[idx] @ params.omega1.T, rtol=0, atol=1e-12
        )

        replies = {}
        for client in clients:
            out = []
            for frame in h_frames:
                out.extend(client.handle(frame))
            replies[client.client_id] = out
        assert [m.kind for m in replies[0]] == [MessageKind.Q_AGGREGATE, MessageKind.Q_OBJECTIVE]
        assert [m.kind for m in replies[1]] == [MessageKind.Q_OBJECTIVE]

        stats = batch_stats(params, train.features[idx], train.labels[idx])
        agg = replies[0][0]
        np.testing.assert_allclose(agg.payload[0].reshape(3, 6), stats.a_bar, rtol=0, atol=1e-12)
        assert agg.payload[1][0] == pytest.approx(stats.c_bar, abs=1e-12)
        b_full = np.empty((6, 8))
        for i, cols in enumerate(col_sets):
            b_full[:, cols] = replies[i][-1].payload[0].reshape(6, cols.size)
        np.testing.assert_allclose(b_full, stats.b_bar, rtol=0, atol=1e-12)

    def test_single_client_feature_matches_sample(self, small_data):
        train, test = small_data
        sample = run_session(
            uncon_config(batch=120, rounds=4, lam=1e-3),
            PartitionedDataset.by_samples(train, 1),
            test,
            SEED,
        )
        feature = run_session(
            uncon_config(algorithm="ssca-feature-uncon", batch=120, rounds=4, lam=1e-3),
            PartitionedDataset.by_features(train, 1),
            test,
            SEED,
        )
        np.testing.assert_allclose(
            feature.params.to_flat(), sample.params.to_flat(), rtol=0, atol=1e-12
        )

    def test_full_batch_sample_and_feature_coincide(self, small_data):
        train, test = small_data
        sample = run_session(
            uncon_config(batch=40, rounds=10),
            PartitionedDataset.by_samples(train, 3),
            test,
            SEED,
        )
        feature = run_session(
            uncon_config(algorithm="ssca-feature-uncon", batch=120, rounds=10),
            PartitionedDataset.by_features(train, 3),
            test,
            SEED,
        )
        np.testing.assert_allclose(
            feature.params.to_flat(), sample.params.to_flat(), rtol=0, atol=1e-11
        )

    def test_feature_round_payload_counts(self, small_data):
        train, test = small_data
        cfg = uncon_config(
            algorithm="ssca-feature-con", batch=30, rounds=1, ubound=0.9, penalty=1e4
        )
        ds = PartitionedDataset.by_features(train, 3)

        class CountingLink(InProcessLink):
            def __init__(self, client):
                super().__init__(client)
                self.sent = []
                self.received = []

            def send(self, msg):
                self.sent.append((msg.kind, sum(s.size for s in msg.payload)))
                super().send(msg)

            def recv(self):
                msg = super().recv()
                self.received.append((msg.kind, sum(s.size for s in msg.payload)))
                return msg

        links = [CountingLink(c) for c in build_clients(cfg, ds, SEED)]
        server = Server(cfg, ds, SEED)
        server.run_round_feature(links, 1)

        b, j, l = 30, 6, 3
        for i, link in enumerate(links):
            p_i = ds.index_sets[i].size
            assert link.sent == [
                (MessageKind.BATCH_ANNOUNCE, b),
                (MessageKind.MODEL_BROADCAST, l * j + j * p_i),
                (MessageKind.H_EXCHANGE, b * j),
                (MessageKind.H_EXCHANGE, b * j),
                (MessageKind.H_EXCHANGE, b * j),
            ]
            expected = [(MessageKind.H_EXCHANGE, b * j)]
            if i == 0:
                expected.append((MessageKind.Q_AGGREGATE, l * j + 1))
            expected.append((MessageKind.Q_OBJECTIVE, j * p_i))
            assert link.received == expected


class TestFailurePaths:
    def test_missing_reply_aborts_round(self, small_data):
        train, _ = small_data
        cfg = uncon_config()
        ds = PartitionedDataset.by_samples(train, 2)
        clients = build_clients(cfg, ds, SEED)

        class MuteLink(InProcessLink):
            def recv(self):
                raise DecodeError("simulated silence", 0)

        links = [InProcessLink(clients[0]), MuteLink(clients[1])]
        server = Server(cfg, ds, SEED)
        with pytest.raises(RoundAbortError, match="client 1") as err:
            server.run_round_sample(links, 1)
        assert err.value.round_index == 1

    def test_wrong_kind_reply_is_protocol_error(self, small_data):
        train, _ = small_data
        cfg = uncon_config()
        ds = PartitionedDataset.by_samples(train, 1)
        clients = build_clients(cfg, ds, SEED)

        class WrongKindLink(InProcessLink):
            def recv(self):
                super().recv()
                return RoundMessage(MessageKind.H_EXCHANGE, 1, 0, (np.zeros(3),))

        server = Server(cfg, ds, SEED)
        with pytest.raises(ProtocolError, match="expected Q_OBJECTIVE"):
            server.run_round_sample([WrongKindLink(clients[0])], 1)

    def test_stale_round_reply_is_protocol_error(self, small_data):
        train, _ = small_data
        cfg = uncon_config()
        ds = PartitionedDataset.by_samples(train, 1)
        clients = build_clients(cfg, ds, SEED)

        class StaleLink(InProcessLink):
            def recv(self):
                msg = super().recv()
                return RoundMessage(msg.kind, 7, msg.sender, msg.payload)

        server = Server(cfg, ds, SEED)
        with pytest.raises(ProtocolError, match="round 7"):
            server.run_round_sample([StaleLink(clients[0])], 1)

    def test_client_rejects_out_of_protocol_traffic(self, small_data):
        train, _ = small_data
        cfg = uncon_config()
        clients = build_clients(cfg, PartitionedDataset.by_samples(train, 1), SEED)
        bad = RoundMessage(MessageKind.H_EXCHANGE, 1, SERVER_SENDER, (np.zeros(3),))
        with pytest.raises(ProtocolError, match="unexpected"):
            clients[0].handle(bad)
        skip = RoundMessage(
            MessageKind.MODEL_BROADCAST, 5, SERVER_SENDER, (np.zeros(18), np.zeros(48))
        )
        with pytest.raises(ProtocolError, match="expected round 1"):
            clients[0].handle(skip)

    def test_unknown_transport_rejected(self, small_data):
        train, test = small_data
        with pytest.raises(ConfigError, match="transport"):
            run_session(
                uncon_config(), PartitionedDataset.by_samples(train, 2), test, SEED,
                transport="pigeon",
            )


class TestTransports:
    def test_socket_matches_in_process_bitwise(self, small_data):
        train, test = small_data
        cfg = uncon_config(rounds=4)
        ds = PartitionedDataset.by_samples(train, 3)
        local = run_session(cfg, ds, test, SEED)
        remote = run_session(cfg, ds, test, SEED, transport="socket")
        assert np.array_equal(local.params.to_flat(), remote.params.to_flat())
        assert local.metrics == remote.metrics

    def test_socket_matches_in_process_feature_constrained(self, small_data):
        train, test = small_data
        cfg = uncon_config(
            algorithm="ssca-feature-con", batch=30, rounds=3, ubound=0.9, penalty=1e4
        )
        ds = PartitionedDataset.by_features(train, 3)
        local = run_session(cfg, ds, test, SEED)
        remote = run_session(cfg, ds, test, SEED, transport="socket")
        assert np.array_equal(local.params.to_flat(), remote.params.to_flat())
        assert local.metrics == remote.metrics

    def test_same_seed_reruns_are_bitwise_identical(self, small_data):
        train, test = small_data
        cfg = uncon_config()
        ds = PartitionedDataset.by_samples(train, 2)
        first = run_session(cfg, ds, test, SEED)
        second = run_session(cfg, ds, test, SEED)
        assert np.array_equal(first.params.to_flat(), second.params.to_flat())
        assert first.metrics == second.metrics
        other = run_session(cfg, ds, test, SEED + 1)
        assert not np.array_equal(first.params.to_flat(), other.params.to_flat())


class TestPenaltyStages:
    def test_stages_warm_start_from_previous_solution(self, small_data):
        train, test = small_data
        cfg = uncon_config(
            algorithm="ssca-sample-con", batch=30, rounds=3, ubound=0.9, penalty=1e3
        )
        ds = PartitionedDataset.by_samples(train, 2)
        stages = run_penalty_stages(cfg, ds, test, SEED, [1e3, 1e4])
        assert len(stages) == 2
        alone = run_session(cfg, ds, test, SEED)
        assert np.array_equal(stages[0].params.to_flat(), alone.params.to_flat())
        cfg2 = uncon_config(
            algorithm="ssca-sample-con", batch=30, rounds=3, ubound=0.9, penalty=1e4
        )
        resumed = run_session(cfg2, ds, test, SEED + 1, warm_start=stages[0].params)
        assert np.array_equal(stages[1].params.to_flat(), resumed.params.to_flat())

    def test_stage_validation(self, small_data):
        train, test = small_data
        ds = PartitionedDataset.by_samples(train, 2)
        con = uncon_config(algorithm="ssca-sample-con", batch=30, ubound=0.9)
        with pytest.raises(ConfigError, match="nondecreasing"):
            run_penalty_stages(con, ds, test, SEED, [1e4, 1e3])
        with pytest.raises(ConfigError, match="positive"):
            run_penalty_stages(con, ds, test, SEED, [])
        with pytest.raises(ConfigError, match="constrained"):
            run_penalty_stages(uncon_config(), ds, test, SEED, [1e3])
