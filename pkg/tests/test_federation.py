"""Tests for the tier tree, aggregation algebra, the round protocol, and
the binary model format."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_tree, random_update, separable_client, vector_params
from spatialfl.data import SyntheticSpec, generate_synthetic, train_valid_split
from spatialfl.errors import (
    CorruptModelError,
    DegenerateWeightsError,
    EmptyAggregationError,
    EmptyClientError,
    MissingClientError,
    ShapeError,
    TopologyError,
)
from spatialfl.federation import (
    MODEL_MAGIC,
    AggregationPolicy,
    ClientUpdate,
    TierNode,
    TierTopology,
    aggregate_tree,
    deserialize_model,
    fedavg,
    local_train,
    normalize_weights,
    per_round_config,
    run_tier_round,
    serialize_model,
    weighted_aggregate,
)
from spatialfl.harness import evaluate
from spatialfl.nn import TrainingConfig, flatten, init_params, params_equal, predict_batch
from spatialfl.seeding import derive_seed

DIMS = (1, 1, 1)  # four flat parameters; enough for aggregation algebra


def update(client_id, values, count=1, raw=None):
    return ClientUpdate(client_id, vector_params(DIMS, values), count,
                        float(count if raw is None else raw))


class TestTopology:
    def test_three_tier_tree_valid(self):
        topo = TierTopology((
            TierNode("c1", 0, "m1"), TierNode("c2", 0, "m1"),
            TierNode("c3", 0, "m2"),
            TierNode("m1", 1, "root"), TierNode("m2", 1, "root"),
            TierNode("root", 2, None),
        ))
        assert topo.clients() == ["c1", "c2", "c3"]
        assert topo.root_id == "root"
        assert topo.subtree_clients("m1") == ["c1", "c2"]
        assert topo.subtree_clients("root") == ["c1", "c2", "c3"]

    def test_duplicate_ids_rejected(self):
        with pytest.raises(TopologyError, match="duplicate"):
            TierTopology((TierNode("a", 0, "r"), TierNode("a", 0, "r"), TierNode("r", 1, None)))

    def test_two_roots_rejected(self):
        with pytest.raises(TopologyError, match="root"):
            TierTopology((TierNode("a", 0, None), TierNode("b", 1, None)))

    def test_parent_must_be_one_tier_above(self):
        with pytest.raises(TopologyError, match="one tier above"):
            TierTopology((TierNode("a", 0, "r"), TierNode("r", 2, None)))

    def test_childless_aggregator_rejected(self):
        with pytest.raises(TopologyError, match="no children"):
            TierTopology((
                TierNode("a", 0, "m1"), TierNode("m1", 1, "r"),
                TierNode("m2", 1, "r"), TierNode("r", 2, None),
            ))

    def test_missing_parent_rejected(self):
        with pytest.raises(TopologyError, match="missing parent"):
            TierTopology((TierNode("a", 0, "ghost"), TierNode("r", 1, None)))


class TestLocalTrain:
    def test_zero_epochs_returns_init_bit_equal(self):
        ds = separable_client("c", n=10, seed=1)
        init = init_params((2, 4, 2), seed=0)
        out = local_train(ds, init, TrainingConfig(epochs=0), vocab=None)
        assert params_equal(out.params, init)

    def test_sample_count_matches_rows(self):
        ds = separable_client("c", n=37, seed=2)
        out = local_train(ds, init_params((2, 4, 2), 0), TrainingConfig(epochs=1), None)
        assert out.sample_count == 37
        assert out.spatial_weight_raw == 37.0

    def test_separable_client_reaches_full_training_accuracy(self):
        ds = separable_client("c", n=20, seed=0)
        config = TrainingConfig(learning_rate=0.05, epochs=200, seed=4)
        out = local_train(ds, init_params((2, 16, 2), seed=3), config, None)
        features, labels = ds.rows("train")
        assert np.mean(predict_batch(out.params, features) == labels) == 1.0

    def test_no_training_rows_rejected(self):
        ds = separable_client("c", n=6, seed=0)
        ds.split_tags[:] = "validation"
        with pytest.raises(EmptyClientError):
            local_train(ds, init_params((2, 4, 2), 0), TrainingConfig(), None)

    def test_dim_mismatch_rejected(self):
        ds = separable_client("c", n=6, seed=0)
        with pytest.raises(ShapeError):
            local_train(ds, init_params((5, 4, 2), 0), TrainingConfig(epochs=1), None)


class TestFedavg:
    def test_mean_of_two(self):
        out = fedavg([update("a", [1, 2, 3, 4]), update("b", [5, 6, 7, 8])])
        assert np.array_equal(flatten(out), [3.0, 4.0, 5.0, 6.0])

    def test_mean_of_three_constants(self):
        out = fedavg([update("a", [0] * 4), update("b", [3] * 4), update("c", [6] * 4)])
        assert np.array_equal(flatten(out), [3.0] * 4)

    def test_power_of_two_identical_models_bit_exact(self):
        p = init_params((2, 3, 2), seed=8)
        for k in (2, 4, 8):
            out = fedavg([ClientUpdate(f"c{i}", p, 1, 1.0) for i in range(k)])
            assert params_equal(out, p)

    def test_other_counts_within_1e15(self):
        p = init_params((2, 3, 2), seed=8)
        out = fedavg([ClientUpdate(f"c{i}", p, 1, 1.0) for i in range(3)])
        assert np.allclose(flatten(out), flatten(p), atol=1e-15, rtol=0.0)

    def test_empty_rejected(self):
        with pytest.raises(EmptyAggregationError):
            fedavg([])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            fedavg([update("a", [0] * 4),
                    ClientUpdate("b", init_params((2, 3, 2), 0), 1, 1.0)])


class TestNormalizeWeights:
    def test_proportional(self):
        assert normalize_weights([2.0, 6.0]) == [0.25, 0.75]

    def test_single(self):
        assert normalize_weights([5.0]) == [1.0]

    def test_all_zero_rejected(self):
        with pytest.raises(DegenerateWeightsError):
            normalize_weights([0.0, 0.0])

    def test_negative_rejected(self):
        with pytest.raises(DegenerateWeightsError):
            normalize_weights([1.0, -0.5])

    @given(st.lists(st.floats(0.0, 1e6), min_size=1, max_size=10).filter(lambda w: sum(w) > 0))
    @settings(max_examples=100, deadline=None)
    def test_sums_to_one(self, raws):
        out = normalize_weights(raws)
        assert abs(sum(out) - 1.0) < 1e-12
        total = sum(raws)
        assert all(abs(o - r / total) < 1e-12 for o, r in zip(out, raws))


class TestWeightedAggregate:
    def test_quarter_three_quarters(self):
        out = weighted_aggregate([update("a", [0] * 4, raw=1), update("b", [4] * 4, raw=3)])
        assert np.array_equal(flatten(out), [3.0] * 4)

    def test_equal_raw_weights_match_fedavg(self):
        updates = [update("a", [1, 2, 3, 4], raw=7), update("b", [5, 6, 7, 8], raw=7),
                   update("c", [0, 1, 0, 1], raw=7)]
        assert np.allclose(flatten(weighted_aggregate(updates)),
                           flatten(fedavg(updates)), atol=1e-15, rtol=0.0)

    def test_single_update_identity(self):
        p = init_params((3, 2, 2), seed=5)
        out = weighted_aggregate([ClientUpdate("only", p, 9, 9.0)])
        assert params_equal(out, p)

    def test_zero_total_weight_rejected(self):
        with pytest.raises(DegenerateWeightsError):
            weighted_aggregate([update("a", [1] * 4, raw=0), update("b", [2] * 4, raw=0)])


class TestAggregationProperties:
    @given(st.integers(0, 2 ** 31))
    @settings(max_examples=100, deadline=None)
    def test_permutation_bit_invariance(self, seed):
        rng = np.random.default_rng(seed)
        dims = (2, 3, 2)
        updates = [random_update(f"c{i:02d}", dims, rng) for i in range(int(rng.integers(2, 7)))]
        shuffled = [updates[i] for i in rng.permutation(len(updates))]
        assert params_equal(fedavg(updates), fedavg(shuffled))
        assert params_equal(weighted_aggregate(updates), weighted_aggregate(shuffled))

    @given(st.integers(0, 2 ** 31))
    @settings(max_examples=100, deadline=None)
    def test_convexity(self, seed):
        rng = np.random.default_rng(seed)
        dims = (2, 3, 2)
        updates = [random_update(f"c{i:02d}", dims, rng) for i in range(int(rng.integers(1, 7)))]
        stacked = np.stack([flatten(u.params) for u in updates])
        for aggregate in (fedavg, weighted_aggregate):
            vec = flatten(aggregate(updates))
            assert np.all(vec >= stacked.min(axis=0) - 1e-15)
            assert np.all(vec <= stacked.max(axis=0) + 1e-15)

    @given(st.integers(0, 2 ** 31))
    @settings(max_examples=60, deadline=None)
    def test_hierarchical_equals_flat_weighted(self, seed):
        rng = np.random.default_rng(seed)
        topo = random_tree(rng, int(rng.integers(2, 10)))
        updates = [random_update(c, (2, 3, 2), rng) for c in topo.clients()]
        root = aggregate_tree(topo, updates, "sample_weighted")[topo.root_id]
        flat = weighted_aggregate(updates)
        assert np.allclose(flatten(root), flatten(flat), atol=1e-12, rtol=0.0)

    def test_uniform_equals_flat_on_balanced_tree(self):
        rng = np.random.default_rng(3)
        nodes = []
        for g in range(2):
            for c in range(3):
                nodes.append(TierNode(f"g{g}c{c}", 0, f"g{g}"))
            nodes.append(TierNode(f"g{g}", 1, "root"))
        nodes.append(TierNode("root", 2, None))
        topo = TierTopology(tuple(nodes))
        updates = [ClientUpdate(c, init_params((2, 3, 2), int(rng.integers(0, 99))), 10, 10.0)
                   for c in topo.clients()]
        root = aggregate_tree(topo, updates, "uniform")[topo.root_id]
        assert np.allclose(flatten(root), flatten(fedavg(updates)), atol=1e-12, rtol=0.0)

    def test_aggregate_tree_missing_update_rejected(self):
        topo = random_tree(np.random.default_rng(0), 3)
        updates = [random_update(c, DIMS, np.random.default_rng(1)) for c in topo.clients()[:-1]]
        with pytest.raises(MissingClientError):
            aggregate_tree(topo, updates, "uniform")


class TestRunTierRound:
    def two_level_topology(self, client_ids):
        nodes = [TierNode(c, 0, "root") for c in client_ids]
        nodes.append(TierNode("root", 1, None))
        return TierTopology(tuple(nodes))

    def test_single_client_root_is_client_model(self):
        topo = self.two_level_topology(["c0"])
        ds = {"c0": separable_client("c0", n=12, seed=0)}
        init = init_params((2, 4, 2), seed=1)
        config = TrainingConfig(learning_rate=0.05, epochs=5, seed=42)
        models = run_tier_round(topo, ds, init, AggregationPolicy("uniform", 1), config, None)
        direct = local_train(ds["c0"], init, per_round_config(config, "c0", 1), None)
        assert params_equal(models["root"], direct.params)
        assert params_equal(models["c0"], direct.params)

    def test_zero_epochs_returns_init_everywhere(self):
        rng = np.random.default_rng(7)
        topo = random_tree(rng, 4)
        ds = {c: separable_client(c, n=8, seed=i) for i, c in enumerate(topo.clients())}
        init = init_params((2, 4, 2), seed=9)
        models = run_tier_round(topo, ds, init, AggregationPolicy("sample_weighted", 1),
                                TrainingConfig(epochs=0), None)
        for node_id, model in models.items():
            assert params_equal(model, init), node_id

    def test_balanced_tree_matches_flat_weighted(self):
        nodes = []
        for g in range(2):
            for c in range(2):
                nodes.append(TierNode(f"g{g}c{c}", 0, f"g{g}"))
            nodes.append(TierNode(f"g{g}", 1, "root"))
        nodes.append(TierNode("root", 2, None))
        topo = TierTopology(tuple(nodes))
        ds = {c: separable_client(c, n=10, seed=i) for i, c in enumerate(topo.clients())}
        init = init_params((2, 4, 2), seed=0)
        config = TrainingConfig(learning_rate=0.05, epochs=3, seed=5)
        models = run_tier_round(topo, ds, init, AggregationPolicy("sample_weighted", 1),
                                config, None)
        updates = [local_train(ds[c], init, per_round_config(config, c, 1), None)
                   for c in topo.clients()]
        assert np.allclose(flatten(models["root"]), flatten(weighted_aggregate(updates)),
                           atol=1e-12, rtol=0.0)

    def test_missing_dataset_rejected(self):
        topo = self.two_level_topology(["c0", "c1"])
        with pytest.raises(MissingClientError, match="c1"):
            run_tier_round(topo, {"c0": separable_client("c0", n=8)},
                           init_params((2, 4, 2), 0), AggregationPolicy(),
                           TrainingConfig(epochs=1), None)

    def test_full_run_bit_reproducible(self):
        rng = np.random.default_rng(13)
        topo = random_tree(rng, 5)
        ds = {c: separable_client(c, n=12, seed=i) for i, c in enumerate(topo.clients())}
        init = init_params((2, 6, 2), seed=2)
        config = TrainingConfig(learning_rate=0.03, epochs=4, seed=77)
        policy = AggregationPolicy("sample_weighted", 3)
        first = run_tier_round(topo, ds, init, policy, config, None)
        second = run_tier_round(topo, ds, init, policy, config, None)
        assert set(first) == set(second)
        for node_id in first:
            assert params_equal(first[node_id], second[node_id])

    def test_more_rounds_do_not_degrade_root_accuracy(self):
        # Non-degradation smoke check on the separable benchmark.
        datasets, topo, _ = generate_synthetic(SyntheticSpec(3, 2, 100, n_classes=3, seed=4))
        datasets = {cid: train_valid_split(ds, 0.8, derive_seed(4, "split", cid))
                    for cid, ds in datasets.items()}
        from spatialfl.spatial import build_vocabulary
        vocab = build_vocabulary([datasets[c].spatial for c in sorted(datasets)])
        init = init_params((vocab.encoding_length + 2, 16, 3), seed=0)
        config = TrainingConfig(learning_rate=0.05, epochs=5, seed=21)

        def root_accuracy(rounds):
            models = run_tier_round(topo, datasets, init,
                                    AggregationPolicy("sample_weighted", rounds), config, vocab)
            return evaluate(models[topo.root_id], datasets.values(), vocab)

        assert root_accuracy(5) >= root_accuracy(1) - 0.02


class TestModelSerialization:
    def test_golden_byte_layout(self):
        p = vector_params(DIMS, [1.5, -2.0, 0.25, 7.0])
        blob = serialize_model(p)
        expected = (MODEL_MAGIC + b"\x01" + struct.pack("<III", 1, 1, 1)
                    + struct.pack("<4d", 1.5, -2.0, 0.25, 7.0))
        assert blob == expected

    @given(st.integers(0, 2 ** 31))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_bit_exact(self, seed):
        rng = np.random.default_rng(seed)
        dims = (int(rng.integers(1, 8)), int(rng.integers(1, 8)), int(rng.integers(2, 5)))
        p = init_params(dims, seed=seed)
        assert params_equal(deserialize_model(serialize_model(p)), p)

    def test_wrong_magic_rejected(self):
        blob = serialize_model(init_params((2, 3, 2), 0))
        with pytest.raises(CorruptModelError, match="magic"):
            deserialize_model(b"XXXX" + blob[4:])

    def test_wrong_version_rejected(self):
        blob = serialize_model(init_params((2, 3, 2), 0))
        with pytest.raises(CorruptModelError, match="version"):
            deserialize_model(blob[:4] + b"\x02" + blob[5:])

    def test_truncated_header_rejected(self):
        with pytest.raises(CorruptModelError, match="short"):
            deserialize_model(b"ESFL\x01")

    def test_short_payload_rejected(self):
        header = MODEL_MAGIC + b"\x01" + struct.pack("<III", 2, 3, 2)
        with pytest.raises(CorruptModelError, match="payload"):
            deserialize_model(header + b"\x00" * 8)

    def test_trailing_bytes_rejected(self):
        blob = serialize_model(init_params((2, 3, 2), 0))
        with pytest.raises(CorruptModelError, match="payload"):
            deserialize_model(blob + b"\x00")

    def test_zero_dimension_header_rejected(self):
        header = MODEL_MAGIC + b"\x01" + struct.pack("<III", 0, 3, 2)
        with pytest.raises(CorruptModelError, match="dims"):
            deserialize_model(header)

    def test_non_finite_payload_rejected(self):
        p = vector_params(DIMS, [1.0, 2.0, 3.0, 4.0])
        blob = serialize_model(p)
        bad = blob[:17] + struct.pack("<4d", np.nan, 0.0, 0.0, 0.0)
        with pytest.raises(CorruptModelError):
            deserialize_model(bad)
