"""Comparison methods that share the tiered protocol's primitives: a
centralized network over pooled rows, a per-client majority-vote
ensemble, and single-level federated averaging (uniform or
sample-weighted).

All baselines encode inputs exactly like the tiered method (pass
``vocab=None`` for the encoding-off ablation) and train clients with the
same per-client seed derivation, so accuracy differences isolate the
aggregation strategy.
"""

from __future__ import annotations

from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .data import ClientDataset
from .errors import EmptyAggregationError, EmptyDatasetError, ShapeError
from .federation import fedavg, local_train, per_round_config, weighted_aggregate
from .nn import ModelParams, TrainingConfig, predict_batch, train
from .spatial import SpatialVocabulary, encode_rows


class BaselineKind(str, Enum):
    CENTRALIZED_NN = "centralized_nn"
    ENSEMBLE = "ensemble"
    FLAT_FEDAVG = "flat_fedavg"
    FLAT_FEDAVG_WEIGHTED = "flat_fedavg_weighted"


def pooled_training_rows(
    clients: Iterable[ClientDataset],
    vocab: SpatialVocabulary | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Encoded training rows pooled in canonical (client_id, row) order."""
    ordered = sorted(clients, key=lambda c: c.client_id)
    blocks, labels = [], []
    for client in ordered:
        feats, labs = client.rows("train")
        if feats.shape[0] == 0:
            continue
        blocks.append(encode_rows(client.spatial, feats, vocab))
        labels.append(labs)
    if not blocks:
        raise EmptyDatasetError("pooled training set is empty")
    return np.vstack(blocks), np.concatenate(labels)


def train_centralized(
    clients: Iterable[ClientDataset],
    init: ModelParams,
    config: TrainingConfig,
    vocab: SpatialVocabulary | None,
) -> ModelParams:
    """One model over every client's training rows, seeded and deterministic."""
    features, labels = pooled_training_rows(clients, vocab)
    if features.shape[1] != init.input_dim:
        raise ShapeError(f"pooled feature length {features.shape[1]} != input_dim {init.input_dim}")
    return train(init, features, labels, config)


def train_client_models(
    clients: Iterable[ClientDataset],
    init: ModelParams,
    config: TrainingConfig,
    vocab: SpatialVocabulary | None,
) -> dict[str, ModelParams]:
    """Independently trained per-client models (ensemble members)."""
    return {
        c.client_id: local_train(c, init, per_round_config(config, c.client_id, 1), vocab).params
        for c in sorted(clients, key=lambda c: c.client_id)
    }


def ensemble_predict(models: Sequence[ModelParams], features: np.ndarray) -> int:
    """Hard majority vote; ties resolve to the lowest class index."""
    return int(ensemble_predict_batch(models, np.asarray(features, dtype=np.float64)[None, :])[0])


def ensemble_predict_batch(models: Sequence[ModelParams], batch: np.ndarray) -> np.ndarray:
    if not models:
        raise EmptyAggregationError("ensemble needs at least one model")
    dims = models[0].dims
    if any(m.dims != dims for m in models):
        raise ShapeError("ensemble members disagree on dims")
    votes = np.stack([predict_batch(m, batch) for m in models])
    counts = np.apply_along_axis(np.bincount, 0, votes, minlength=dims[2])
    return np.argmax(counts, axis=0)


def flat_fedavg(
    clients: Iterable[ClientDataset],
    init: ModelParams,
    config: TrainingConfig,
    vocab: SpatialVocabulary | None,
    weighted: bool = False,
) -> ModelParams:
    """Single-level federated averaging: every client trains from one
    shared init, then one aggregation step produces the global model."""
    updates = [
        local_train(c, init, per_round_config(config, c.client_id, 1), vocab)
        for c in sorted(clients, key=lambda c: c.client_id)
    ]
    return weighted_aggregate(updates) if weighted else fedavg(updates)
