"""
User-specific embedding propagation over the knowledge graph.

Handles:
- Relation weights: softmax over N_v of the user-relation inner product
- Neighbour aggregation and the tanh(W [v || agg] + b) layer update
- Receptive-field propagation (exactly equal to whole-graph propagation)
- Reverse-mode gradients for W, b, entity states and relation vectors
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.db.triple_store import KnowledgeGraph
from app.exceptions import UnknownEntityError
from app.utils.numeric import segment_softmax


Adjacency = Tuple[np.ndarray, np.ndarray, np.ndarray]


@dataclass
class PropagationParams:
    """Per-layer transformation W_k (p x 2p) and bias b_k (p)"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def layer_count(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.biases[0].shape[0] if self.biases else 0

    @classmethod
    def init(cls, layer_count: int, dim: int, rng: np.random.Generator) -> "PropagationParams":
        """Xavier-uniform weights, zero biases"""
        bound = np.sqrt(6.0 / (dim + 2 * dim))
        weights = [rng.uniform(-bound, bound, size=(dim, 2 * dim)) for _ in range(layer_count)]
        biases = [np.zeros(dim) for _ in range(layer_count)]
        return cls(weights, biases)

    def copy(self) -> "PropagationParams":
        return PropagationParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


# ===== SINGLE-NODE OPERATIONS =====

def relation_weights(u_vec: np.ndarray, relation_vecs: np.ndarray) -> np.ndarray:
    """
    Softmax of u . r over the relations of one neighbourhood.

    Args:
        u_vec: (p,) user representation
        relation_vecs: (n, p) relation vector of each (h, r, t) in N_v; a
            relation shared by several neighbours appears once per neighbour

    Returns:
        (n,) weights summing to 1
    """
    relation_vecs = np.atleast_2d(np.asarray(relation_vecs, dtype=np.float64))
    if relation_vecs.shape[0] == 0 or relation_vecs.size == 0:
        raise ValueError("relation_weights needs a nonempty neighbourhood")
    scores = relation_vecs @ np.asarray(u_vec, dtype=np.float64)
    scores = scores - scores.max()
    ex = np.exp(scores)
    return ex / ex.sum()


def aggregate_neighbors(
    state: np.ndarray,
    u_vec: np.ndarray,
    relation_table: np.ndarray,
    neighborhood: Sequence[Tuple[int, int]],
) -> np.ndarray:
    """Sum over (relation id, tail) in N_v of w_u^r times the tail's current state"""
    if len(neighborhood) == 0:
        raise ValueError("cannot aggregate an empty neighbourhood")
    rels = np.array([r for r, _ in neighborhood], dtype=np.int64)
    tails = np.array([t for _, t in neighborhood], dtype=np.int64)
    weights = relation_weights(u_vec, relation_table[rels])
    return weights @ state[tails]


def _ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenation of arange(s, s + c) for each (s, c)"""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    offsets = np.cumsum(counts) - counts
    return np.repeat(np.asarray(starts, dtype=np.int64) - offsets, counts) + np.arange(total)


def capped_adjacency(adjacency: Adjacency, cap: Optional[int]) -> Adjacency:
    """Keep at most `cap` neighbours per node (the first ones in (relation, tail) order)"""
    if cap is None:
        return adjacency
    indptr, rels, tails = adjacency
    counts = np.minimum(np.diff(indptr), cap)
    keep = _ranges(indptr[:-1], counts)
    new_indptr = np.zeros_like(indptr)
    np.cumsum(counts, out=new_indptr[1:])
    return new_indptr, rels[keep], tails[keep]


def layer_update(
    state: np.ndarray,
    u_vec: np.ndarray,
    relation_table: np.ndarray,
    params: PropagationParams,
    layer_index: int,
    adjacency: Adjacency,
) -> np.ndarray:
    """
    One synchronous layer over the whole graph.

    Nodes with tail neighbours get tanh(W [v || agg] + b); leaves keep
    their state. Every update reads the previous layer only.
    """
    indptr, rels, tails = adjacency
    n = state.shape[0]
    degree = np.diff(indptr)
    edge_node = np.repeat(np.arange(n), degree)
    new_state = state.copy()
    if len(edge_node) == 0:
        return new_state

    weights = segment_softmax(relation_table[rels] @ u_vec, edge_node, n)
    agg = np.zeros_like(state)
    np.add.at(agg, edge_node, weights[:, None] * state[tails])
    active = np.flatnonzero(degree > 0)
    concat = np.concatenate([state[active], agg[active]], axis=1)
    new_state[active] = np.tanh(concat @ params.weights[layer_index].T + params.biases[layer_index])
    return new_state


def propagate_full_graph(
    kg: KnowledgeGraph,
    entity_state: np.ndarray,
    relation_table: np.ndarray,
    params: PropagationParams,
    user: int,
    neighbor_cap: Optional[int] = None,
) -> np.ndarray:
    """Every layer applied to every entity; the reference for propagate()"""
    adjacency = capped_adjacency(kg.adjacency(), neighbor_cap)
    u_vec = entity_state[user]
    state = entity_state.copy()
    for k in range(params.layer_count):
        state = layer_update(state, u_vec, relation_table, params, k, adjacency)
    return state


# ===== RECEPTIVE-FIELD PASS =====

@dataclass
class PropagationCache:
    """Everything the backward pass needs from one forward pass"""
    user: int
    field_nodes: np.ndarray                # global ids of S_0, ascending
    target_local: np.ndarray               # local index of each requested target
    edge_node: np.ndarray                  # local head of each edge
    edge_rel: np.ndarray
    edge_tail: np.ndarray                  # local tail of each edge
    edge_weight: np.ndarray
    layer_members: List[np.ndarray]        # boolean mask over local nodes of S_k, k = 1..L
    layer_active: List[np.ndarray] = field(default_factory=list)
    layer_edges: List[np.ndarray] = field(default_factory=list)
    layer_inputs: List[np.ndarray] = field(default_factory=list)
    layer_concat: List[np.ndarray] = field(default_factory=list)
    layer_outputs: List[np.ndarray] = field(default_factory=list)
    layer_masks: List[Optional[np.ndarray]] = field(default_factory=list)


@dataclass
class PropagationGrads:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    entity_rows: np.ndarray                # global ids
    entity_grads: np.ndarray               # (len(entity_rows), p), rows may repeat
    relation: np.ndarray                   # (|R|, p)


def receptive_field(
    adjacency: Adjacency,
    targets: np.ndarray,
    layer_count: int,
) -> List[np.ndarray]:
    """
    S_L = targets, S_{k-1} = S_k plus the tails of S_k.

    Returns:
        [S_0, S_1, ..., S_L] as sorted global id arrays
    """
    indptr, _, tails = adjacency
    sets = [np.unique(targets)]
    for _ in range(layer_count):
        current = sets[0]
        reach = tails[_ranges(indptr[current], indptr[current + 1] - indptr[current])]
        sets.insert(0, np.union1d(current, reach))
    return sets


def forward(
    adjacency: Adjacency,
    entity_state: np.ndarray,
    relation_table: np.ndarray,
    params: PropagationParams,
    user: int,
    targets: Sequence[int],
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, PropagationCache]:
    """
    Propagated representation of each target specific to `user`.

    Only the receptive field of the targets is touched; the result equals
    propagate_full_graph() restricted to the targets.

    Returns:
        ((len(targets), p) representations, cache for backward())
    """
    n_entities = entity_state.shape[0]
    targets = np.asarray(targets, dtype=np.int64)
    if np.any(targets < 0) or np.any(targets >= n_entities) or not 0 <= user < n_entities:
        raise UnknownEntityError("propagation target outside the knowledge graph")

    indptr, rels, tails = adjacency
    L = params.layer_count
    sets = receptive_field(adjacency, targets, L)
    field_nodes = sets[0]
    local = np.full(n_entities, -1, dtype=np.int64)
    local[field_nodes] = np.arange(len(field_nodes))

    # edges of S_1 nodes; their tails lie in S_0
    heads = sets[1] if L > 0 else np.zeros(0, dtype=np.int64)
    counts = indptr[heads + 1] - indptr[heads]
    edge_index = _ranges(indptr[heads], counts)
    edge_node = np.repeat(local[heads], counts)
    edge_rel = rels[edge_index]
    edge_tail = local[tails[edge_index]]

    u_vec = entity_state[user]
    edge_weight = segment_softmax(relation_table[edge_rel] @ u_vec, edge_node, len(field_nodes)) \
        if len(edge_node) else np.zeros(0)

    members = []
    for k in range(1, L + 1):
        mask = np.zeros(len(field_nodes), dtype=bool)
        mask[local[sets[k]]] = True
        members.append(mask)

    cache = PropagationCache(
        user=user, field_nodes=field_nodes, target_local=local[targets],
        edge_node=edge_node, edge_rel=edge_rel, edge_tail=edge_tail,
        edge_weight=edge_weight, layer_members=members,
    )

    has_edges = np.zeros(len(field_nodes), dtype=bool)
    has_edges[edge_node] = True
    state = entity_state[field_nodes].copy()
    for k in range(L):
        active = np.flatnonzero(members[k] & has_edges)
        edges = np.flatnonzero(members[k][edge_node])
        agg = np.zeros_like(state)
        np.add.at(agg, edge_node[edges], edge_weight[edges, None] * state[edge_tail[edges]])
        concat = np.concatenate([state[active], agg[active]], axis=1)
        mask = None
        if dropout > 0.0 and rng is not None:
            mask = (rng.random(concat.shape) >= dropout) / (1.0 - dropout)
            concat = concat * mask
        out = np.tanh(concat @ params.weights[k].T + params.biases[k])

        cache.layer_active.append(active)
        cache.layer_edges.append(edges)
        cache.layer_inputs.append(state)
        cache.layer_concat.append(concat)
        cache.layer_outputs.append(out)
        cache.layer_masks.append(mask)

        state = state.copy()
        state[active] = out

    return state[cache.target_local], cache


def backward(
    cache: PropagationCache,
    d_targets: np.ndarray,
    entity_state: np.ndarray,
    relation_table: np.ndarray,
    params: PropagationParams,
) -> PropagationGrads:
    """Reverse pass of forward() for upstream gradient d_targets (len(targets), p)"""
    p = entity_state.shape[1]
    d_state = np.zeros((len(cache.field_nodes), p))
    np.add.at(d_state, cache.target_local, d_targets)

    d_weights = [np.zeros_like(w) for w in params.weights]
    d_biases = [np.zeros_like(b) for b in params.biases]
    d_edge_weight = np.zeros(len(cache.edge_node))

    for k in reversed(range(params.layer_count)):
        active = cache.layer_active[k]
        edges = cache.layer_edges[k]
        state_in = cache.layer_inputs[k]
        out = cache.layer_outputs[k]

        d_out = d_state[active]
        d_prev = d_state.copy()
        d_prev[active] = 0.0

        dz = d_out * (1.0 - out * out)
        d_weights[k] += dz.T @ cache.layer_concat[k]
        d_biases[k] += dz.sum(axis=0)
        d_concat = dz @ params.weights[k]
        if cache.layer_masks[k] is not None:
            d_concat = d_concat * cache.layer_masks[k]

        d_prev[active] += d_concat[:, :p]
        d_agg = np.zeros_like(d_state)
        d_agg[active] = d_concat[:, p:]

        if len(edges):
            heads = cache.edge_node[edges]
            tails = cache.edge_tail[edges]
            np.add.at(d_prev, tails, cache.edge_weight[edges, None] * d_agg[heads])
            d_edge_weight[edges] += np.sum(d_agg[heads] * state_in[tails], axis=1)
        d_state = d_prev

    d_relation = np.zeros_like(relation_table)
    rows = [cache.field_nodes]
    grads = [d_state]
    if len(cache.edge_node):
        w = cache.edge_weight
        seg_sum = np.zeros(len(cache.field_nodes))
        np.add.at(seg_sum, cache.edge_node, w * d_edge_weight)
        d_score = w * (d_edge_weight - seg_sum[cache.edge_node])
        u_vec = entity_state[cache.user]
        np.add.at(d_relation, cache.edge_rel, d_score[:, None] * u_vec[None, :])
        d_user = d_score @ relation_table[cache.edge_rel]
        rows.append(np.array([cache.user]))
        grads.append(d_user[None, :])

    return PropagationGrads(
        weights=d_weights,
        biases=d_biases,
        entity_rows=np.concatenate(rows),
        entity_grads=np.concatenate(grads, axis=0),
        relation=d_relation,
    )


def propagate(
    kg: KnowledgeGraph,
    entity_state: np.ndarray,
    relation_table: np.ndarray,
    params: PropagationParams,
    user: int,
    targets: Iterable[int],
    neighbor_cap: Optional[int] = None,
) -> Dict[int, np.ndarray]:
    """
    v_u^(K) for each requested target; with zero layers the initial state.

    Args:
        kg: knowledge graph
        entity_state: (|E|, p) layer-0 representations
        relation_table: (|R|, p) relation vectors used in the weights
        params: layer weights
        user: query user entity id
        targets: entity ids to return
        neighbor_cap: optional per-node neighbour limit

    Returns:
        target id -> representation
    """
    targets = list(targets)
    outputs, _ = forward(
        capped_adjacency(kg.adjacency(), neighbor_cap), entity_state, relation_table, params, user, targets,
    )
    return {t: outputs[i] for i, t in enumerate(targets)}
