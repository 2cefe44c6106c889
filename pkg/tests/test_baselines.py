"""Tests for the centralized, ensemble, and flat-averaging baselines."""

import numpy as np
import pytest

from helpers import separable_client
from spatialfl.baselines import (
    ensemble_predict,
    ensemble_predict_batch,
    flat_fedavg,
    train_centralized,
    train_client_models,
)
from spatialfl.data import SyntheticSpec, generate_synthetic, train_valid_split
from spatialfl.errors import EmptyAggregationError, EmptyDatasetError, ShapeError
from spatialfl.federation import (
    AggregationPolicy,
    local_train,
    per_round_config,
    run_tier_round,
)
from spatialfl.harness import evaluate
from spatialfl.nn import TrainingConfig, flat_length, init_params, params_equal, unflatten
from spatialfl.seeding import derive_seed
from spatialfl.spatial import build_vocabulary


def constant_class_model(n_classes, winner, input_dim=2, hidden=2):
    """Zero weights and a peaked output bias: predicts one class for any input."""
    dims = (input_dim, hidden, n_classes)
    vec = np.zeros(flat_length(dims))
    vec[-n_classes + winner] = 9.0 if winner else 0.0
    if winner == 0:
        vec[-n_classes] = 9.0
    return unflatten(dims, vec)


class TestCentralized:
    def test_single_client_pool_matches_local_train(self):
        ds = separable_client("only", n=14, seed=2)
        init = init_params((2, 4, 2), seed=1)
        config = TrainingConfig(learning_rate=0.05, epochs=6, seed=33)
        pooled = train_centralized([ds], init, config, None)
        direct = local_train(ds, init, config, None)
        assert params_equal(pooled, direct.params)

    def test_zero_epochs_return_init(self):
        ds = separable_client("c", n=8, seed=0)
        init = init_params((2, 4, 2), seed=7)
        assert params_equal(train_centralized([ds], init, TrainingConfig(epochs=0), None), init)

    def test_pool_order_does_not_matter(self):
        clients = [separable_client(f"c{i}", n=10, seed=i) for i in range(4)]
        init = init_params((2, 4, 2), seed=0)
        config = TrainingConfig(learning_rate=0.02, epochs=3, seed=11)
        forward_order = train_centralized(clients, init, config, None)
        reverse_order = train_centralized(list(reversed(clients)), init, config, None)
        assert params_equal(forward_order, reverse_order)

    def test_empty_pool_rejected(self):
        ds = separable_client("c", n=6, seed=0)
        ds.split_tags[:] = "validation"
        with pytest.raises(EmptyDatasetError):
            train_centralized([ds], init_params((2, 4, 2), 0), TrainingConfig(), None)

    def test_noiseless_synthetic_reaches_095(self):
        # The construction is separable given region identity, so a pooled
        # model over encoded features must get at least 0.95.
        datasets, _, _ = generate_synthetic(SyntheticSpec(3, 2, 100, n_classes=3, seed=6))
        datasets = {cid: train_valid_split(ds, 0.8, derive_seed(6, "split", cid))
                    for cid, ds in datasets.items()}
        vocab = build_vocabulary([datasets[c].spatial for c in sorted(datasets)])
        init = init_params((vocab.encoding_length + 2, 16, 3), seed=1)
        config = TrainingConfig(learning_rate=0.05, epochs=100, seed=2)
        model = train_centralized(list(datasets.values()), init, config, vocab)
        assert evaluate(model, datasets.values(), vocab) >= 0.95


class TestEnsemblePredict:
    def test_majority_wins(self):
        models = [constant_class_model(2, 1), constant_class_model(2, 1),
                  constant_class_model(2, 0)]
        assert ensemble_predict(models, np.zeros(2)) == 1

    def test_tie_breaks_to_lowest_class(self):
        models = [constant_class_model(2, 0), constant_class_model(2, 1)]
        assert ensemble_predict(models, np.zeros(2)) == 0

    def test_single_model_is_its_prediction(self):
        model = constant_class_model(3, 2)
        assert ensemble_predict([model], np.ones(2)) == 2

    def test_copies_of_one_model_predict_like_it(self):
        rng = np.random.default_rng(8)
        model = init_params((3, 5, 3), seed=4)
        batch = rng.normal(size=(20, 3))
        from spatialfl.nn import predict_batch
        single = predict_batch(model, batch)
        for k in (2, 3, 5):
            assert np.array_equal(ensemble_predict_batch([model] * k, batch), single)

    def test_empty_ensemble_rejected(self):
        with pytest.raises(EmptyAggregationError):
            ensemble_predict([], np.zeros(2))

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ensemble_predict([init_params((2, 3, 2), 0), init_params((3, 3, 2), 0)],
                             np.zeros(2))


class TestFlatFedavg:
    def test_single_client_returns_its_model(self):
        ds = separable_client("solo", n=12, seed=3)
        init = init_params((2, 4, 2), seed=2)
        config = TrainingConfig(learning_rate=0.05, epochs=4, seed=19)
        out = flat_fedavg([ds], init, config, None)
        direct = local_train(ds, init, per_round_config(config, "solo", 1), None)
        assert params_equal(out, direct.params)

    def test_equal_counts_weighted_matches_unweighted(self):
        clients = [separable_client(f"c{i}", n=10, seed=i) for i in range(3)]
        init = init_params((2, 4, 2), seed=0)
        config = TrainingConfig(learning_rate=0.05, epochs=2, seed=8)
        plain = flat_fedavg(clients, init, config, None, weighted=False)
        weighted = flat_fedavg(clients, init, config, None, weighted=True)
        assert np.allclose(
            np.abs(np.concatenate([plain.layer1_weights.ravel() - weighted.layer1_weights.ravel(),
                                   plain.layer1_bias - weighted.layer1_bias,
                                   plain.layer2_weights.ravel() - weighted.layer2_weights.ravel(),
                                   plain.layer2_bias - weighted.layer2_bias])),
            0.0, atol=1e-15)

    def test_matches_degenerate_tier_round_bit_exact(self):
        # A one-level tree run through the full protocol must reproduce the
        # flat implementation bit for bit, for both policies.
        from spatialfl.federation import TierNode, TierTopology

        clients = {f"c{i}": separable_client(f"c{i}", n=8 + 2 * i, seed=i) for i in range(4)}
        nodes = [TierNode(c, 0, "root") for c in clients]
        nodes.append(TierNode("root", 1, None))
        topo = TierTopology(tuple(nodes))
        init = init_params((2, 4, 2), seed=5)
        config = TrainingConfig(learning_rate=0.03, epochs=3, seed=31)
        for mode, weighted in (("uniform", False), ("sample_weighted", True)):
            tree_models = run_tier_round(topo, clients, init, AggregationPolicy(mode, 1),
                                         config, None)
            flat = flat_fedavg(list(clients.values()), init, config, None, weighted=weighted)
            assert params_equal(tree_models["root"], flat)

    def test_client_models_use_per_client_seeds(self):
        clients = [separable_client(f"c{i}", n=10, seed=0) for i in range(2)]
        init = init_params((2, 4, 2), seed=0)
        members = train_client_models(clients, init, TrainingConfig(epochs=2, seed=3), None)
        # identical data but distinct derived seeds produce distinct models
        assert not params_equal(members["c0"], members["c1"])
