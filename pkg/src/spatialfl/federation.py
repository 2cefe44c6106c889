"""Tiered federated averaging over a tree of aggregators.

Clients at tier 0 train locally and send their parameters plus a raw
spatial weight (their training sample count) upward. Every interior node
replaces its model with the uniform mean of its children's models, or
with the convex combination given by the children's normalised raw
weights; an interior node's own raw weight is the sum of its descendants'
sample counts, which makes hierarchical weighted aggregation compose
exactly with flat weighted aggregation. After each round the root model
is broadcast back down and the cycle repeats.

Aggregation accumulates over children in ascending node-id order using a
fixed pairwise reduction, so results are bit-identical no matter how the
inputs are presented or how client training is scheduled.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Iterable, Mapping

import numpy as np

from .errors import (
    CorruptModelError,
    DegenerateWeightsError,
    EmptyAggregationError,
    EmptyClientError,
    MissingClientError,
    ShapeError,
    TopologyError,
)
from .nn import ModelParams, TrainingConfig, flat_length, flatten, train, unflatten
from .seeding import derive_seed
from .spatial import SpatialVocabulary, encode_rows

if TYPE_CHECKING:
    from .data import ClientDataset

MODEL_MAGIC = b"ESFL"
MODEL_VERSION = 1

AGGREGATION_MODES = ("uniform", "sample_weighted")


@dataclass(frozen=True)
class TierNode:
    node_id: str
    tier: int
    parent: str | None


@dataclass(frozen=True)
class TierTopology:
    """A tree of nodes: clients at tier 0, one parentless root on top."""

    nodes: tuple[TierNode, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        validate_topology(self)

    def node_ids(self) -> list[str]:
        return [n.node_id for n in self.nodes]

    def clients(self) -> list[str]:
        return sorted(n.node_id for n in self.nodes if n.tier == 0)

    @property
    def root_id(self) -> str:
        return next(n.node_id for n in self.nodes if n.parent is None)

    @property
    def max_tier(self) -> int:
        return max(n.tier for n in self.nodes)

    def children(self, node_id: str) -> list[str]:
        return sorted(n.node_id for n in self.nodes if n.parent == node_id)

    def tier_of(self, node_id: str) -> int:
        return next(n.tier for n in self.nodes if n.node_id == node_id)

    def subtree_nodes(self, node_id: str) -> list[str]:
        """All node ids at or below a node, ascending."""
        by_parent: dict[str, list[str]] = {}
        for n in self.nodes:
            if n.parent is not None:
                by_parent.setdefault(n.parent, []).append(n.node_id)
        out, stack = [], [node_id]
        while stack:
            nid = stack.pop()
            out.append(nid)
            stack.extend(by_parent.get(nid, []))
        return sorted(out)

    def subtree_clients(self, node_id: str) -> list[str]:
        """Client ids below (or at) a node, ascending."""
        tiers = {n.node_id: n.tier for n in self.nodes}
        return [nid for nid in self.subtree_nodes(node_id) if tiers[nid] == 0]


def validate_topology(topology: TierTopology) -> None:
    """Raise :class:`TopologyError` unless the node list forms a legal tree."""
    nodes = topology.nodes
    if not nodes:
        raise TopologyError("topology has no nodes")
    ids = [n.node_id for n in nodes]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise TopologyError(f"duplicate node ids: {dupes}")
    by_id = {n.node_id: n for n in nodes}
    roots = [n for n in nodes if n.parent is None]
    if len(roots) != 1:
        raise TopologyError(f"expected exactly one root, found {len(roots)}")
    if any(n.tier < 0 for n in nodes):
        raise TopologyError("tier levels must be non-negative")
    children: dict[str, int] = {}
    for n in nodes:
        if n.parent is not None:
            parent = by_id.get(n.parent)
            if parent is None:
                raise TopologyError(f"node {n.node_id!r} references missing parent {n.parent!r}")
            if parent.tier != n.tier + 1:
                raise TopologyError(
                    f"parent {parent.node_id!r} at tier {parent.tier} must sit one tier "
                    f"above child {n.node_id!r} at tier {n.tier}"
                )
            children[n.parent] = children.get(n.parent, 0) + 1
    for n in nodes:
        if n.tier > 0 and children.get(n.node_id, 0) == 0:
            raise TopologyError(f"aggregator {n.node_id!r} has no children")
    if not any(n.tier == 0 for n in nodes):
        raise TopologyError("topology has no clients (tier-0 nodes)")


@dataclass(frozen=True)
class ClientUpdate:
    """One client's contribution to a round of aggregation."""

    client_id: str
    params: ModelParams
    sample_count: int
    spatial_weight_raw: float

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.spatial_weight_raw < 0:
            raise ValueError("spatial_weight_raw must be non-negative")


@dataclass(frozen=True)
class AggregationPolicy:
    """How each tier combines its children, and how many rounds to run."""

    mode: str = "sample_weighted"
    rounds: int = 1

    def __post_init__(self):
        if self.mode not in AGGREGATION_MODES:
            raise ValueError(f"mode must be one of {AGGREGATION_MODES}, got {self.mode!r}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


def per_round_config(config: TrainingConfig, client_id: str, round_index: int) -> TrainingConfig:
    """The training config a client uses in a given round.

    Seeds derive from (master seed, client id, round), so every client and
    round gets an independent minibatch stream.
    """
    return replace(config, seed=derive_seed(config.seed, "train", client_id, round_index))


def local_train(
    dataset: "ClientDataset",
    init: ModelParams,
    config: TrainingConfig,
    vocab: SpatialVocabulary | None,
) -> ClientUpdate:
    """Train one client from ``init`` on its encoded training rows."""
    features, labels = dataset.rows("train")
    if features.shape[0] == 0:
        raise EmptyClientError(f"client {dataset.client_id!r} has no training rows")
    encoded = encode_rows(dataset.spatial, features, vocab)
    if encoded.shape[1] != init.input_dim:
        raise ShapeError(
            f"encoded feature length {encoded.shape[1]} != model input_dim {init.input_dim}"
        )
    if dataset.n_classes != init.n_classes:
        raise ShapeError(f"dataset has {dataset.n_classes} classes, model {init.n_classes}")
    params = train(init, encoded, labels, config)
    n = int(features.shape[0])
    return ClientUpdate(dataset.client_id, params, n, float(n))


def _sorted_consistent(updates: Iterable[ClientUpdate]) -> list[ClientUpdate]:
    ordered = sorted(updates, key=lambda u: u.client_id)
    if not ordered:
        raise EmptyAggregationError("no updates to aggregate")
    dims = ordered[0].params.dims
    for u in ordered:
        if u.params.dims != dims:
            raise ShapeError(f"update {u.client_id!r} has dims {u.params.dims}, expected {dims}")
    return ordered


def _tree_sum(vectors: list[np.ndarray]) -> np.ndarray:
    # Fixed pairwise reduction: deterministic, and exact for 2^k identical
    # inputs, which plain left-to-right accumulation is not.
    while len(vectors) > 1:
        paired = [vectors[i] + vectors[i + 1] for i in range(0, len(vectors) - 1, 2)]
        if len(vectors) % 2:
            paired.append(vectors[-1])
        vectors = paired
    return vectors[0]


def fedavg(updates: Iterable[ClientUpdate]) -> ModelParams:
    """Uniform federated average: the elementwise mean of the parameters."""
    ordered = _sorted_consistent(updates)
    vectors = [flatten(u.params) for u in ordered]
    mean = _tree_sum(vectors) / len(vectors)
    return unflatten(ordered[0].params.dims, mean)


def normalize_weights(raws: Iterable[float]) -> list[float]:
    """Scale non-negative raw weights into a convex combination."""
    raws = [float(r) for r in raws]
    if not raws:
        raise EmptyAggregationError("no weights to normalise")
    if any(r < 0 for r in raws):
        raise DegenerateWeightsError("raw weights must be non-negative")
    total = sum(raws)
    if total == 0:
        raise DegenerateWeightsError("raw weights sum to zero")
    return [r / total for r in raws]


def weighted_aggregate(updates: Iterable[ClientUpdate]) -> ModelParams:
    """Convex combination of parameters weighted by normalised raw weights."""
    ordered = _sorted_consistent(updates)
    weights = normalize_weights([u.spatial_weight_raw for u in ordered])
    vectors = [w * flatten(u.params) for w, u in zip(weights, ordered)]
    return unflatten(ordered[0].params.dims, _tree_sum(vectors))


def aggregate_tree(
    topology: TierTopology,
    updates: Iterable[ClientUpdate],
    mode: str = "sample_weighted",
) -> dict[str, ModelParams]:
    """Fold client updates up the tree; returns one model per node.

    Interior nodes carry the sum of their descendants' sample counts and
    raw weights, so with the sample-weighted mode the root equals the flat
    weighted average over all clients (up to rounding).
    """
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"mode must be one of {AGGREGATION_MODES}, got {mode!r}")
    by_id = {u.client_id: u for u in updates}
    clients = topology.clients()
    missing = [c for c in clients if c not in by_id]
    if missing:
        raise MissingClientError(f"no update for clients: {missing}")
    extra = sorted(set(by_id) - set(clients))
    if extra:
        raise TopologyError(f"updates for unknown clients: {extra}")

    models = {c: by_id[c].params for c in clients}
    samples = {c: by_id[c].sample_count for c in clients}
    weights = {c: by_id[c].spatial_weight_raw for c in clients}
    for tier in range(1, topology.max_tier + 1):
        for node in sorted(n.node_id for n in topology.nodes if n.tier == tier):
            kids = topology.children(node)
            child_updates = [
                ClientUpdate(k, models[k], samples[k], weights[k]) for k in kids
            ]
            if mode == "uniform":
                models[node] = fedavg(child_updates)
            else:
                models[node] = weighted_aggregate(child_updates)
            samples[node] = sum(samples[k] for k in kids)
            weights[node] = float(sum(weights[k] for k in kids))
    return models


def run_tier_round(
    topology: TierTopology,
    datasets: Mapping[str, "ClientDataset"],
    global_init: ModelParams,
    policy: AggregationPolicy,
    config: TrainingConfig,
    vocab: SpatialVocabulary | None,
) -> dict[str, ModelParams]:
    """Run the full tiered protocol for ``policy.rounds`` rounds.

    Each round every client trains from the current broadcast model
    (round 1 broadcasts ``global_init``), updates flow up the tree, and
    the root model becomes the next broadcast. Returns the final model of
    every node: localized models at tier 0, one aggregate per interior
    node, and the global model at the root.
    """
    clients = topology.clients()
    missing = [c for c in clients if c not in datasets]
    if missing:
        raise MissingClientError(f"no dataset for clients: {missing}")
    broadcast = global_init
    models: dict[str, ModelParams] = {}
    for round_index in range(1, policy.rounds + 1):
        updates = [
            local_train(datasets[c], broadcast, per_round_config(config, c, round_index), vocab)
            for c in clients
        ]
        models = aggregate_tree(topology, updates, policy.mode)
        broadcast = models[topology.root_id]
    return models


def serialize_model(params: ModelParams) -> bytes:
    """Binary model format: magic, version, u32 dims, float64 payload.

    Layout (all little-endian): ``b"ESFL"``, one version byte, three u32
    dims (input, hidden, classes), then the flattened parameters as
    64-bit IEEE-754 floats. No padding.
    """
    header = MODEL_MAGIC + bytes([MODEL_VERSION]) + struct.pack("<III", *params.dims)
    payload = np.ascontiguousarray(flatten(params), dtype="<f8").tobytes()
    return header + payload


def deserialize_model(blob: bytes) -> ModelParams:
    """Parse :func:`serialize_model` output; any inconsistency is rejected."""
    if len(blob) < 17:
        raise CorruptModelError(f"file too short ({len(blob)} bytes) for a model header")
    if blob[:4] != MODEL_MAGIC:
        raise CorruptModelError(f"bad magic {blob[:4]!r}")
    if blob[4] != MODEL_VERSION:
        raise CorruptModelError(f"unsupported format version {blob[4]}")
    dims = struct.unpack("<III", blob[5:17])
    if min(dims) < 1:
        raise CorruptModelError(f"header declares invalid dims {dims}")
    expected = 8 * flat_length(dims)
    payload = blob[17:]
    if len(payload) != expected:
        raise CorruptModelError(
            f"payload is {len(payload)} bytes, dims {dims} require {expected}"
        )
    vector = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    try:
        return unflatten(dims, vector)
    except (ShapeError, ValueError) as exc:
        raise CorruptModelError(f"payload rejected: {exc}") from exc
