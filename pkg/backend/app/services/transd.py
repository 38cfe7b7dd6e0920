"""
TransD general knowledge-graph embedding.

Handles:
- Dynamic projection h_perp = r_p (h_p . h) + h without d x d matrices
- Energy g(h, r, t) = -||h_perp + r - t_perp||^2 and the margin ranking loss
- Analytic gradients, kind-constrained corruption and mini-batch SGD
- Filtered, type-constrained link prediction (hits@N, mean rank)
- Checkpoint save / load
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from app.config import TransDSection
from app.db.checkpoint import read_transd_checkpoint, write_transd_checkpoint
from app.db.triple_store import KnowledgeGraph
from app.exceptions import CheckpointError, TrainingDivergedError
from app.models.schemas import RELATION_ORDER


@dataclass
class TransDParams:
    """Meaning and projection vectors for every entity and relation (m = n = d)"""
    entity_vec: np.ndarray
    entity_proj: np.ndarray
    relation_vec: np.ndarray
    relation_proj: np.ndarray
    loss_history: List[float] = field(default_factory=list, compare=False)

    @property
    def dim(self) -> int:
        return self.entity_vec.shape[1]

    @property
    def n_entities(self) -> int:
        return self.entity_vec.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation_vec.shape[0]

    def as_tensors(self) -> Dict[str, np.ndarray]:
        return {
            "entity_vec": self.entity_vec,
            "entity_proj": self.entity_proj,
            "relation_vec": self.relation_vec,
            "relation_proj": self.relation_proj,
        }

    def copy(self) -> "TransDParams":
        return TransDParams(**{k: v.copy() for k, v in self.as_tensors().items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.as_tensors().values())


def init_params(n_entities: int, n_relations: int, dim: int, rng: np.random.Generator) -> TransDParams:
    """Uniform in [-6/sqrt(d), 6/sqrt(d)], entity meaning vectors then L2-normalized"""
    bound = 6.0 / np.sqrt(dim)
    params = TransDParams(
        entity_vec=rng.uniform(-bound, bound, size=(n_entities, dim)),
        entity_proj=rng.uniform(-bound, bound, size=(n_entities, dim)),
        relation_vec=rng.uniform(-bound, bound, size=(n_relations, dim)),
        relation_proj=rng.uniform(-bound, bound, size=(n_relations, dim)),
    )
    _normalize_rows(params.entity_vec)
    return params


def _normalize_rows(matrix: np.ndarray) -> None:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    np.divide(matrix, norms, out=matrix, where=norms > 0)


# ===== SCORING =====

def project(entity_vec: np.ndarray, entity_proj: np.ndarray, relation_proj: np.ndarray) -> np.ndarray:
    """
    (r_p e_p^T + I) e, evaluated as r_p (e_p . e) + e.

    Works on single vectors or row-aligned batches.
    """
    entity_vec = np.asarray(entity_vec, dtype=np.float64)
    entity_proj = np.asarray(entity_proj, dtype=np.float64)
    relation_proj = np.asarray(relation_proj, dtype=np.float64)
    if entity_vec.shape != entity_proj.shape or entity_vec.shape[-1] != relation_proj.shape[-1]:
        raise ValueError(
            f"dimension mismatch: entity {entity_vec.shape}, entity_proj {entity_proj.shape}, "
            f"relation_proj {relation_proj.shape}"
        )
    return relation_proj * np.sum(entity_proj * entity_vec, axis=-1, keepdims=True) + entity_vec


def _residual(h, h_p, t, t_p, r, r_p) -> np.ndarray:
    return project(h, h_p, r_p) + r - project(t, t_p, r_p)


def energy(h, h_p, t, t_p, r, r_p):
    """-||h_perp + r - t_perp||^2; 0 is the most plausible value"""
    delta = _residual(h, h_p, t, t_p, r, r_p)
    value = -np.sum(delta * delta, axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def triple_energy(params: TransDParams, triples: np.ndarray) -> np.ndarray:
    """Energy of each (head, relation_id, tail) row"""
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    return energy(
        params.entity_vec[h], params.entity_proj[h],
        params.entity_vec[t], params.entity_proj[t],
        params.relation_vec[r], params.relation_proj[r],
    )


def margin_loss(params: TransDParams, golden: np.ndarray, corrupted: np.ndarray, margin: float) -> float:
    """sum max(0, margin + g(corrupted) - g(golden))"""
    if golden.shape != corrupted.shape:
        raise ValueError("golden and corrupted batches must be aligned")
    hinge = margin + triple_energy(params, corrupted) - triple_energy(params, golden)
    return float(np.sum(np.maximum(hinge, 0.0)))


def _energy_grads(params: TransDParams, triples: np.ndarray):
    """Per-row partial derivatives of g w.r.t. (h, h_p, r, r_p, t, t_p)"""
    h_idx, r_idx, t_idx = triples[:, 0], triples[:, 1], triples[:, 2]
    h, h_p = params.entity_vec[h_idx], params.entity_proj[h_idx]
    t, t_p = params.entity_vec[t_idx], params.entity_proj[t_idx]
    r, r_p = params.relation_vec[r_idx], params.relation_proj[r_idx]

    hp_h = np.sum(h_p * h, axis=1, keepdims=True)
    tp_t = np.sum(t_p * t, axis=1, keepdims=True)
    delta = r_p * hp_h + h + r - (r_p * tp_t + t)
    rp_delta = np.sum(r_p * delta, axis=1, keepdims=True)

    return {
        "h": -2.0 * (delta + h_p * rp_delta),
        "h_p": -2.0 * rp_delta * h,
        "r": -2.0 * delta,
        "r_p": -2.0 * (hp_h - tp_t) * delta,
        "t": 2.0 * (delta + t_p * rp_delta),
        "t_p": 2.0 * rp_delta * t,
    }


def margin_loss_gradients(
    params: TransDParams,
    golden: np.ndarray,
    corrupted: np.ndarray,
    margin: float,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Loss and its gradient w.r.t. every tensor of params.

    Returns:
        (loss, grads) with grads keyed like TransDParams.as_tensors()
    """
    hinge = margin + triple_energy(params, corrupted) - triple_energy(params, golden)
    active = hinge > 0
    loss = float(np.sum(hinge[active]))

    grads = {name: np.zeros_like(value) for name, value in params.as_tensors().items()}
    if not np.any(active):
        return loss, grads

    for triples, sign in ((corrupted[active], 1.0), (golden[active], -1.0)):
        partial = _energy_grads(params, triples)
        np.add.at(grads["entity_vec"], triples[:, 0], sign * partial["h"])
        np.add.at(grads["entity_proj"], triples[:, 0], sign * partial["h_p"])
        np.add.at(grads["entity_vec"], triples[:, 2], sign * partial["t"])
        np.add.at(grads["entity_proj"], triples[:, 2], sign * partial["t_p"])
        np.add.at(grads["relation_vec"], triples[:, 1], sign * partial["r"])
        np.add.at(grads["relation_proj"], triples[:, 1], sign * partial["r_p"])
    return loss, grads


# ===== CORRUPTION =====

class CorruptionSampler:
    """
    Replaces the head or the tail (50/50) with a uniformly drawn entity of
    the same kind, rejecting candidates that form a golden triple.
    """

    def __init__(self, kg: KnowledgeGraph, max_rounds: int = 10):
        self.n_entities = kg.n_entities
        self.n_relations = kg.n_relations
        self.max_rounds = max_rounds
        self.kinds = kg.kind_codes()
        order = np.argsort(self.kinds, kind="stable")
        self.by_kind = order
        counts = np.bincount(self.kinds, minlength=int(self.kinds.max()) + 1 if len(self.kinds) else 0)
        self.kind_count = counts
        self.kind_start = np.concatenate([[0], np.cumsum(counts)[:-1]]) if len(counts) else counts
        self.golden_keys = np.sort(self._keys(kg.triple_array()))

    def _keys(self, triples: np.ndarray) -> np.ndarray:
        h, r, t = (triples[:, i].astype(np.int64) for i in range(3))
        return (h * self.n_relations + r) * self.n_entities + t

    def is_golden(self, triples: np.ndarray) -> np.ndarray:
        keys = self._keys(triples)
        pos = np.searchsorted(self.golden_keys, keys)
        pos = np.minimum(pos, len(self.golden_keys) - 1)
        return self.golden_keys[pos] == keys

    def _draw_same_kind(self, entities: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        kinds = self.kinds[entities]
        offsets = np.floor(rng.random(len(entities)) * self.kind_count[kinds]).astype(np.int64)
        return self.by_kind[self.kind_start[kinds] + offsets]

    def corrupt(self, golden: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """
        Returns:
            (corrupted, ok): one corruption per golden row; rows with ok False
            found no valid corruption and must be skipped
        """
        corrupted = golden.copy()
        replace_head = rng.random(len(golden)) < 0.5
        pending = np.arange(len(golden))
        for round_index in range(self.max_rounds):
            if len(pending) == 0:
                break
            if round_index == self.max_rounds // 2:
                # the drawn side may have no alternative; try the other one
                replace_head[pending] = ~replace_head[pending]
            rows = golden[pending]
            heads = replace_head[pending]
            column = np.where(heads, 0, 2)
            candidates = self._draw_same_kind(rows[np.arange(len(rows)), column], rng)
            trial = rows.copy()
            trial[np.arange(len(rows)), column] = candidates
            corrupted[pending] = trial
            pending = pending[self.is_golden(trial)]
        ok = np.ones(len(golden), dtype=bool)
        ok[pending] = False
        return corrupted, ok


# ===== TRAINING =====

def train_transd(
    kg: KnowledgeGraph,
    config: TransDSection,
    dim: int,
    seed: int,
    init: Optional[TransDParams] = None,
) -> TransDParams:
    """
    Mini-batch SGD on the margin ranking loss.

    Each batch step moves parameters by learning_rate times the batch-mean
    gradient. Entity meaning vectors are renormalized to unit length after
    every epoch.

    Args:
        kg: knowledge graph (must contain triples)
        config: margin, learning rate, epochs, batch size
        dim: embedding dimension d
        seed: RNG seed
        init: optional starting parameters (copied)

    Returns:
        Trained parameters with per-epoch summed loss in loss_history
    """
    golden_all = kg.triple_array()
    if len(golden_all) == 0:
        raise ValueError("cannot train TransD on an empty knowledge graph")

    rng = np.random.default_rng(seed)
    params = init.copy() if init is not None else init_params(kg.n_entities, kg.n_relations, dim, rng)
    sampler = CorruptionSampler(kg)
    n = len(golden_all)
    logger.info(f"Training TransD: {n} triples, {kg.n_entities} entities, d={dim}, epochs={config.epochs}")

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        skipped = 0
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            golden = golden_all[order[start:start + config.batch_size]]
            corrupted, ok = sampler.corrupt(golden, rng)
            skipped += int(np.sum(~ok))
            golden, corrupted = golden[ok], corrupted[ok]
            if len(golden) == 0:
                continue

            loss, grads = margin_loss_gradients(params, golden, corrupted, config.margin)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                logger.error(f"TransD produced a non-finite loss/gradient at epoch {epoch}, batch {batch_index}")
                raise TrainingDivergedError("train-transd", epoch, f"loss={loss}", batch=batch_index)

            step = config.learning_rate / len(golden)
            params.entity_vec -= step * grads["entity_vec"]
            params.entity_proj -= step * grads["entity_proj"]
            params.relation_vec -= step * grads["relation_vec"]
            params.relation_proj -= step * grads["relation_proj"]
            epoch_loss += loss

        _normalize_rows(params.entity_vec)
        params.loss_history.append(epoch_loss)
        logger.info(f"TransD epoch {epoch + 1}/{config.epochs}: loss={epoch_loss:.6f}")
        if skipped:
            logger.debug(f"{skipped} triples had no valid corruption this epoch")

    if not params.is_finite():
        raise TrainingDivergedError("train-transd", config.epochs - 1, "parameters are not finite")
    return params


# ===== LINK PREDICTION =====

def link_prediction(
    params: TransDParams,
    kg: KnowledgeGraph,
    triples: np.ndarray,
    hits_at: Sequence[int] = (1, 3, 10),
) -> Dict[str, float]:
    """
    Filtered tail prediction.

    Candidates are all entities of the true tail's kind; other golden tails
    of (h, r, .) are removed. Ties count against the true tail.
    """
    if len(triples) == 0:
        return {**{f"hits@{k}": 0.0 for k in hits_at}, "mean_rank": 0.0}
    kinds = kg.kind_codes()
    sampler = CorruptionSampler(kg)
    ranks = []
    for h, r, t in np.asarray(triples, dtype=np.int64).tolist():
        candidates = np.flatnonzero(kinds == kinds[t])
        queries = np.column_stack([
            np.full(len(candidates), h), np.full(len(candidates), r), candidates,
        ])
        scores = triple_energy(params, queries)
        true_score = scores[candidates == t][0]
        keep = (candidates != t) & ~sampler.is_golden(queries)
        rank = 1 + int(np.sum(scores[keep] >= true_score))
        ranks.append(rank)
    ranks = np.array(ranks)
    metrics = {f"hits@{k}": float(np.mean(ranks <= k)) for k in hits_at}
    metrics["mean_rank"] = float(np.mean(ranks))
    return metrics


# ===== PERSISTENCE =====

def save_transd(params: TransDParams, path: str) -> None:
    write_transd_checkpoint(path, params.as_tensors())


def load_transd(path: str, expected_entities: Optional[int] = None) -> TransDParams:
    params = TransDParams(**read_transd_checkpoint(path))
    if expected_entities is not None and params.n_entities != expected_entities:
        raise CheckpointError(
            f"{path}: checkpoint has {params.n_entities} entities, knowledge graph has {expected_entities}"
        )
    if params.n_relations != len(RELATION_ORDER):
        raise CheckpointError(f"{path}: checkpoint has {params.n_relations} relations, expected {len(RELATION_ORDER)}")
    return params
