"""
KGEP recommender: combined representations, scoring and training.

Handles:
- u* = (u_perp + r_INTERACT) || u^(K) and a* = a_perp || a_u^(K)
- Sigmoid (or raw) matching score and top-K recommendation
- Negative-sampling BCE with L2 regularization and its analytic gradient
- Adam training of the propagation side with the TransD half frozen
- Versioned checkpoint save / load
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from app.config import KGEPSection
from app.db.checkpoint import read_model_checkpoint, write_model_checkpoint
from app.db.triple_store import KnowledgeGraph
from app.exceptions import CheckpointError, TrainingDivergedError, UnknownEntityError
from app.models.schemas import EntityKind, RelationKind
from app.services import propagation
from app.services.propagation import PropagationParams, capped_adjacency
from app.services.transd import TransDParams, project
from app.utils.numeric import sigmoid, softplus


@dataclass
class TrainingInstance:
    """One observed (user, app) pair with its sampled negatives"""
    user: int
    positive: int
    negatives: Tuple[int, ...]


class AdamOptimizer:
    """Adam with bias correction over a dict of named tensors"""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        """In-place update of every tensor in params that has a gradient"""
        self.step_count += 1
        t = self.step_count
        for name, grad in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(grad)
                self.v[name] = np.zeros_like(grad)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / (1.0 - self.beta1 ** t)
            v_hat = self.v[name] / (1.0 - self.beta2 ** t)
            params[name] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)

    def state_tensors(self) -> Dict[str, np.ndarray]:
        tensors = {"adam.t": np.array([float(self.step_count)])}
        for name in self.m:
            tensors[f"adam.m.{name}"] = self.m[name]
            tensors[f"adam.v.{name}"] = self.v[name]
        return tensors

    def load_state(self, tensors: Dict[str, np.ndarray]) -> None:
        self.step_count = int(tensors.get("adam.t", np.zeros(1))[0])
        for name, value in tensors.items():
            if name.startswith("adam.m."):
                self.m[name[len("adam.m."):]] = value.copy()
            elif name.startswith("adam.v."):
                self.v[name[len("adam.v."):]] = value.copy()


@dataclass
class KGEPModel:
    """
    Frozen TransD tensors plus the trainable propagation side.

    The propagation side is the entity-state table (|E| x p), the relation
    table used in the relation weights (|R| x p) and the per-layer W, b.
    """
    kg: KnowledgeGraph
    transd: TransDParams
    entity_state: np.ndarray
    relation_table: np.ndarray
    prop: PropagationParams
    config: KGEPSection
    seed: int
    optimizer: Optional[AdamOptimizer] = None
    validation_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self._adjacency = capped_adjacency(self.kg.adjacency(), self.config.neighbor_cap)
        self.app_entities = self.kg.entities_of_kind(EntityKind.APP)
        self.user_entities = self.kg.entities_of_kind(EntityKind.USER)
        self._interact = RelationKind.INTERACT.relation_id

    # ===== PARAMETER VIEWS =====

    def trainable(self) -> Dict[str, np.ndarray]:
        """Named views of every trainable tensor"""
        tensors = {"entity": self.entity_state, "relation": self.relation_table}
        for k in range(self.prop.layer_count):
            tensors[f"W{k}"] = self.prop.weights[k]
            tensors[f"b{k}"] = self.prop.biases[k]
        return tensors

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.trainable().items()}

    def restore(self, snapshot: Dict[str, np.ndarray]) -> None:
        for name, value in self.trainable().items():
            value[...] = snapshot[name]

    def l2_norm_sq(self) -> float:
        return float(sum(np.sum(v * v) for v in self.trainable().values()))

    # ===== GENERAL HALF =====

    def _check_user(self, user: int) -> None:
        if not 0 <= user < self.kg.n_entities or self.kg.kind_of(user) != EntityKind.USER:
            raise UnknownEntityError(f"entity {user} is not a user of the knowledge graph")

    def _check_apps(self, apps: np.ndarray) -> None:
        if len(apps) and not np.all(np.isin(apps, self.app_entities)):
            raise UnknownEntityError("app id not present in the knowledge graph")

    def general_user(self, user: int) -> np.ndarray:
        """u_perp + r_INTERACT (head mapping of INTERACT)"""
        t = self.transd
        r = self._interact
        return project(t.entity_vec[user], t.entity_proj[user], t.relation_proj[r]) + t.relation_vec[r]

    def general_apps(self, apps: np.ndarray) -> np.ndarray:
        """a_perp for each app (tail mapping of INTERACT)"""
        t = self.transd
        r_p = np.broadcast_to(t.relation_proj[self._interact], (len(apps), t.dim))
        return project(t.entity_vec[apps], t.entity_proj[apps], r_p)

    # ===== SCORING =====

    def logits(self, user: int, apps: Sequence[int]) -> np.ndarray:
        """u*^T a_u* for each app"""
        apps = np.asarray(apps, dtype=np.int64)
        self._check_user(user)
        self._check_apps(apps)
        general = self.general_apps(apps) @ self.general_user(user)
        targets = np.concatenate([[user], apps])
        outputs, _ = propagation.forward(
            self._adjacency, self.entity_state, self.relation_table, self.prop, user, targets,
        )
        return general + outputs[1:] @ outputs[0]

    def score(self, user: int, app: int) -> float:
        """sigmoid(u*^T a_u*), or the raw inner product when raw_score is set"""
        logit = float(self.logits(user, [app])[0])
        return logit if self.config.raw_score else sigmoid(logit)

    def score_all(self, user: int) -> np.ndarray:
        """Scores of every app entity, aligned with app_entities"""
        logits = self.logits(user, self.app_entities)
        return logits if self.config.raw_score else sigmoid(logits)

    def recommend(self, user: int, k: int, exclude: Optional[set] = None) -> List[Tuple[int, float]]:
        """
        Top-K (app entity id, score), descending score, ties by ascending id.

        Args:
            user: user entity id
            k: list length (>= 1)
            exclude: app entity ids to leave out, usually the training positives
        """
        if k < 1:
            raise ValueError("K must be >= 1")
        scores = self.score_all(user)
        return rank_candidates(self.app_entities, scores, k, exclude)

    def training_positives(self, user: int) -> set:
        indptr, rels, tails = self.kg.adjacency()
        start, end = indptr[user], indptr[user + 1]
        return set(tails[start:end][rels[start:end] == self._interact].tolist())


def rank_candidates(
    candidates: np.ndarray,
    scores: np.ndarray,
    k: int,
    exclude: Optional[set] = None,
) -> List[Tuple[int, float]]:
    """Sort by score descending then id ascending, drop `exclude`, keep K"""
    candidates = np.asarray(candidates, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if exclude:
        keep = ~np.isin(candidates, np.fromiter(exclude, dtype=np.int64, count=len(exclude)))
        candidates, scores = candidates[keep], scores[keep]
    order = np.lexsort((candidates, -scores))[:k]
    return [(int(candidates[i]), float(scores[i])) for i in order]


# ===== CONSTRUCTION =====

def init_model(
    kg: KnowledgeGraph,
    transd: TransDParams,
    config: KGEPSection,
    seed: int,
) -> KGEPModel:
    """
    Fresh model around frozen TransD tensors.

    With propagation_dim equal to d the entity states and relation vectors
    start from the TransD meaning vectors; a wider propagation side is
    Xavier initialised.
    """
    if transd.n_entities != kg.n_entities:
        raise CheckpointError(
            f"TransD has {transd.n_entities} entities, knowledge graph has {kg.n_entities}"
        )
    rng = np.random.default_rng(seed)
    p = config.propagation_dim or transd.dim
    if p == transd.dim:
        entity_state = transd.entity_vec.copy()
        relation_table = transd.relation_vec.copy()
    else:
        bound = np.sqrt(3.0 / p)
        entity_state = rng.uniform(-bound, bound, size=(kg.n_entities, p))
        relation_table = rng.uniform(-bound, bound, size=(kg.n_relations, p))
    prop = PropagationParams.init(config.propagation_layers, p, rng)
    return KGEPModel(
        kg=kg, transd=transd, entity_state=entity_state, relation_table=relation_table,
        prop=prop, config=config, seed=seed,
    )


# ===== LOSS =====

def _group_by_user(instances: Sequence[TrainingInstance]) -> Dict[int, List[TrainingInstance]]:
    groups: Dict[int, List[TrainingInstance]] = {}
    for inst in instances:
        groups.setdefault(inst.user, []).append(inst)
    return {u: groups[u] for u in sorted(groups)}


def bce_loss(model: KGEPModel, instances: Sequence[TrainingInstance], l2_lambda: float) -> float:
    """
    sum -log y(u, v) + sum_neg -log(1 - y(u, i)) + lambda ||theta||^2

    theta covers every trainable tensor; the TransD half is constant.
    """
    total = 0.0
    for user, group in _group_by_user(instances).items():
        for inst in group:
            logits = model.logits(user, [inst.positive, *inst.negatives])
            total += float(softplus(-logits[0]) + np.sum(softplus(logits[1:])))
    loss = total + l2_lambda * model.l2_norm_sq()
    if not np.isfinite(loss):
        raise TrainingDivergedError("train-kgep", -1, f"non-finite loss {loss}")
    return loss


def bce_loss_gradients(
    model: KGEPModel,
    instances: Sequence[TrainingInstance],
    l2_lambda: float,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Loss and reverse-mode gradient w.r.t. model.trainable().

    One propagation pass per distinct user covers all of that user's
    positives and negatives. `rng` enables message dropout.
    """
    grads = {name: 2.0 * l2_lambda * value for name, value in model.trainable().items()}
    loss = l2_lambda * model.l2_norm_sq()
    dropout = model.config.dropout if rng is not None else 0.0

    for user, group in _group_by_user(instances).items():
        apps = np.array([a for inst in group for a in (inst.positive, *inst.negatives)], dtype=np.int64)
        labels = np.array([lbl for inst in group for lbl in (1.0,) + (0.0,) * len(inst.negatives)])
        model._check_user(user)
        model._check_apps(apps)

        targets = np.concatenate([[user], apps])
        outputs, cache = propagation.forward(
            model._adjacency, model.entity_state, model.relation_table, model.prop,
            user, targets, dropout=dropout, rng=rng,
        )
        u_k, a_k = outputs[0], outputs[1:]
        logits = model.general_apps(apps) @ model.general_user(user) + a_k @ u_k

        loss += float(np.sum(np.where(labels > 0, softplus(-logits), softplus(logits))))
        d_logit = sigmoid(logits) - labels

        d_targets = np.empty_like(outputs)
        d_targets[0] = d_logit @ a_k
        d_targets[1:] = d_logit[:, None] * u_k[None, :]

        g = propagation.backward(cache, d_targets, model.entity_state, model.relation_table, model.prop)
        np.add.at(grads["entity"], g.entity_rows, g.entity_grads)
        grads["relation"] += g.relation
        for k in range(model.prop.layer_count):
            grads[f"W{k}"] += g.weights[k]
            grads[f"b{k}"] += g.biases[k]

    return loss, grads


# ===== TRAINING =====

class NegativeSampler:
    """Uniform negatives from apps that are not training positives of the user"""

    def __init__(self, app_entities: np.ndarray, positives: Dict[int, set]):
        self.app_entities = np.asarray(app_entities, dtype=np.int64)
        self.positives = positives

    def sample(self, user: int, count: int, rng: np.random.Generator) -> Optional[Tuple[int, ...]]:
        """count negatives for user, or None when every app is a positive"""
        taken = self.positives.get(user, set())
        available = len(self.app_entities) - len(taken)
        if available <= 0:
            return None
        if available < len(self.app_entities) // 2:
            pool = np.array([a for a in self.app_entities.tolist() if a not in taken], dtype=np.int64)
            picks = pool[rng.integers(0, len(pool), size=count)]
        else:
            picks = []
            while len(picks) < count:
                candidate = int(self.app_entities[rng.integers(0, len(self.app_entities))])
                if candidate not in taken:
                    picks.append(candidate)
            picks = np.array(picks, dtype=np.int64)
        negatives = tuple(int(a) for a in picks)
        assert not taken.intersection(negatives), "negative sample collides with a training positive"
        return negatives


def train_kgep(
    kg: KnowledgeGraph,
    transd: TransDParams,
    config: KGEPSection,
    seed: int,
    validation: Optional[Callable[[KGEPModel], float]] = None,
) -> KGEPModel:
    """
    Adam on the BCE objective over INTERACT triples of the training graph.

    Args:
        kg: knowledge graph built from the training partition
        transd: trained TransD tensors (never modified)
        config: kgep section
        seed: RNG seed
        validation: optional callback returning validation MAP@10; when given,
            the parameters of the best epoch are restored at the end

    Returns:
        Trained model with optimizer state and validation history
    """
    transd_before = {name: value.copy() for name, value in transd.as_tensors().items()}
    model = init_model(kg, transd, config, seed)
    rng = np.random.default_rng(seed + 1)

    pairs = kg.triples_of(RelationKind.INTERACT)[:, [0, 2]]
    if len(pairs) == 0:
        raise ValueError("knowledge graph has no INTERACT triples to train on")
    positives: Dict[int, set] = {}
    for u, a in pairs.tolist():
        positives.setdefault(u, set()).add(a)
    sampler = NegativeSampler(model.app_entities, positives)

    optimizer = AdamOptimizer(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    model.optimizer = optimizer
    logger.info(
        f"Training KGEP: {len(pairs)} positives, layers={config.propagation_layers}, "
        f"p={model.entity_state.shape[1]}, epochs={config.epochs}"
    )

    best_map, best_epoch, best_state = -1.0, 0, None
    if validation is not None:
        best_map = validation(model)
        best_state = model.snapshot()
        model.validation_history.append(best_map)
        logger.info(f"KGEP epoch 0: validation MAP@10={best_map:.6f}")
    stale = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        for batch_index, start in enumerate(range(0, len(pairs), config.batch_size)):
            instances = []
            for u, a in pairs[order[start:start + config.batch_size]].tolist():
                negatives = sampler.sample(u, config.negatives_per_positive, rng)
                if negatives is not None:
                    instances.append(TrainingInstance(u, a, negatives))
            if not instances:
                continue

            loss, grads = bce_loss_gradients(model, instances, config.l2_lambda, rng=rng)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                logger.error(f"KGEP produced a non-finite loss/gradient at epoch {epoch}, batch {batch_index}")
                raise TrainingDivergedError("train-kgep", epoch, f"loss={loss}", batch=batch_index)
            optimizer.step(model.trainable(), grads)
            epoch_loss += loss
            logger.debug(f"KGEP epoch {epoch} batch {batch_index}: loss={loss:.6f}")

        if validation is None:
            logger.info(f"KGEP epoch {epoch}/{config.epochs}: loss={epoch_loss:.6f}")
            continue

        val_map = validation(model)
        model.validation_history.append(val_map)
        logger.info(f"KGEP epoch {epoch}/{config.epochs}: loss={epoch_loss:.6f}, validation MAP@10={val_map:.6f}")
        if val_map > best_map:
            best_map, best_epoch, best_state = val_map, epoch, model.snapshot()
            stale = 0
        else:
            stale += 1
            if config.early_stop_patience is not None and stale >= config.early_stop_patience:
                logger.info(f"No validation gain for {stale} epochs, stopping at epoch {epoch}")
                break

    if best_state is not None:
        model.restore(best_state)
        logger.info(f"Restored epoch {best_epoch} (validation MAP@10={best_map:.6f})")

    for name, value in transd.as_tensors().items():
        if not np.array_equal(value, transd_before[name]):
            raise TrainingDivergedError("train-kgep", best_epoch, f"frozen TransD tensor {name} changed")
    return model


# ===== PERSISTENCE =====

def save_model(model: KGEPModel, path: str) -> None:
    """Write the model with its config snapshot, seed and optimizer state"""
    tensors = {f"transd.{name}": value for name, value in model.transd.as_tensors().items()}
    tensors["state.entity"] = model.entity_state
    tensors["state.relation"] = model.relation_table
    for k in range(model.prop.layer_count):
        tensors[f"prop.W{k}"] = model.prop.weights[k]
        tensors[f"prop.b{k}"] = model.prop.biases[k]
    if model.optimizer is not None:
        tensors.update(model.optimizer.state_tensors())
    if model.validation_history:
        tensors["validation_history"] = np.array(model.validation_history)
    snapshot = {
        "kgep": model.config.model_dump(mode="json"),
        "embed_dim": model.transd.dim,
        "n_entities": model.kg.n_entities,
        "n_triples": model.kg.n_triples,
    }
    write_model_checkpoint(path, snapshot, model.seed, tensors)


def load_model(path: str, kg: KnowledgeGraph) -> KGEPModel:
    """Rebuild a model from its checkpoint; the graph must be the one it was trained on"""
    snapshot, seed, tensors = read_model_checkpoint(path)
    if snapshot.get("n_entities") != kg.n_entities or snapshot.get("n_triples") != kg.n_triples:
        raise CheckpointError(
            f"{path}: checkpoint was trained on a graph with {snapshot.get('n_entities')} entities / "
            f"{snapshot.get('n_triples')} triples, got {kg.n_entities} / {kg.n_triples}"
        )
    try:
        config = KGEPSection.model_validate(snapshot["kgep"])
        transd = TransDParams(**{
            name: tensors[f"transd.{name}"]
            for name in ("entity_vec", "entity_proj", "relation_vec", "relation_proj")
        })
        layers = config.propagation_layers
        prop = PropagationParams(
            [tensors[f"prop.W{k}"] for k in range(layers)],
            [tensors[f"prop.b{k}"] for k in range(layers)],
        )
        model = KGEPModel(
            kg=kg, transd=transd, entity_state=tensors["state.entity"],
            relation_table=tensors["state.relation"], prop=prop, config=config, seed=seed,
        )
    except KeyError as e:
        raise CheckpointError(f"{path}: missing tensor {e}") from e

    optimizer = AdamOptimizer(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    optimizer.load_state(tensors)
    model.optimizer = optimizer
    if "validation_history" in tensors:
        model.validation_history = tensors["validation_history"].tolist()
    return model
