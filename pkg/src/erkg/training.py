"""1-vs-all cross-entropy training with Adagrad and penalty integration.

Every (head, relation) of a batch is scored against all entities, the
loss is the cross entropy against the true tail, and the configured
penalty (scaled by its coefficient) is added.  One sparse-aware Adagrad
step per batch touches exactly the parameter rows that received
gradient; rotation relations are reprojected to unit modulus after each
step.  Single-threaded runs are bitwise deterministic given the config
seed.
"""

from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .data import CategoryMap, TripleStore, build_filter_index
from .errors import CheckpointError, ConfigError, NumericError
from .grads import GradAccumulator, all_finite
from .models import ModelKind, ModelParams, backward_all_tails, forward_all_tails, init_params, project_constraints
from .ranking import RankingReport, evaluate
from .regularizers import (
    EpsilonState,
    RegularizerSpec,
    penalty_dura,
    penalty_er,
    penalty_er_second_order,
    penalty_fro,
    penalty_n3,
    sample_path_pairs,
    select_pairs,
)

logger = logging.getLogger(__name__)

# When set, every optimizer step asserts the Adagrad accumulators never
# decreased (slow; meant for tests).
DEBUG_CHECKS = False


@dataclass
class TrainConfig:
    model: str = "distmult"
    dim: int = 64
    batch_size: int = 256
    learning_rate: float = 0.1
    epochs: int = 10
    seed: int = 0
    regularizer: RegularizerSpec = field(default_factory=RegularizerSpec)
    eval_every: int = 0
    adagrad_eps: float = 1e-10
    patience: int | None = None

    def validate(self) -> None:
        ModelKind(self.model)
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.dim < 1:
            raise ConfigError("epochs, batch_size, and dim must be >= 1")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")
        if self.adagrad_eps <= 0:
            raise ConfigError("adagrad_eps must be positive")
        self.regularizer.validate()


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    reg_value: float
    valid_mrr: float | None = None
    valid_hits1: float | None = None
    valid_hits10: float | None = None
    seconds: float = 0.0


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def to_json_list(self):
        return [
            {
                "epoch": r.epoch,
                "loss": r.loss,
                "reg": r.reg_value,
                "valid_mrr": r.valid_mrr,
                "valid_hits1": r.valid_hits1,
                "valid_hits10": r.valid_hits10,
                "seconds": r.seconds,
            }
            for r in self.records
        ]


def cross_entropy_loss(scores: np.ndarray, target: int):
    """Stable cross entropy of one score vector against a target entity.

    Uses a max-shifted log-sum-exp with the maximum's unit term split out,
    so fully saturated losses underflow gracefully instead of rounding to
    zero.  Returns ``(loss, softmax(scores) - one_hot(target))``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= target < len(scores):
        raise IndexError(f"target {target} out of range")
    m_idx = int(np.argmax(scores))
    ex = np.exp(scores - scores[m_idx])
    rest = ex.copy()
    rest[m_idx] = 0.0
    rest_sum = rest.sum()
    if target == m_idx:
        loss = float(np.log1p(rest_sum))
    else:
        loss = float(scores[m_idx] - scores[target] + np.log1p(rest_sum))
    grad = ex / (1.0 + rest_sum)
    grad[target] -= 1.0
    return loss, grad


def adagrad_update(param, grad, acc, lr, eps):
    """One Adagrad step: returns updated copies of (param, accumulator)."""
    if param.shape != grad.shape or param.shape != acc.shape:
        raise ValueError("shape mismatch in adagrad_update")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient in adagrad_update")
    acc2 = acc + grad * grad
    return param - lr * grad / (np.sqrt(acc2) + eps), acc2


def _adagrad_step_inplace(param, acc, idx, grad, lr, eps):
    # idx must hold unique rows (GradAccumulator.finalize guarantees it)
    if DEBUG_CHECKS:
        before = acc.copy()
    if idx is None:
        acc += grad * grad
        param -= lr * grad / (np.sqrt(acc) + eps)
    else:
        a = acc[idx] + grad * grad
        acc[idx] = a
        param[idx] -= lr * grad / (np.sqrt(a) + eps)
    if DEBUG_CHECKS:
        assert np.all(acc >= before), "adagrad accumulator decreased"


def _batch_ce(params: ModelParams, batch: np.ndarray):
    """Mean cross entropy over a batch with per-block gradients."""
    heads, rels, tails = batch[:, 0], batch[:, 1], batch[:, 2]
    S, ctx = forward_all_tails(params, heads, rels)
    m = S.max(axis=1, keepdims=True)
    ex = np.exp(S - m)
    z = ex.sum(axis=1)
    b_idx = np.arange(len(batch))
    loss = float(np.mean(m[:, 0] + np.log(z) - S[b_idx, tails]))
    G = ex / z[:, None]
    G[b_idx, tails] -= 1.0
    G /= len(batch)
    return loss, backward_all_tails(params, ctx, G)


def _penalty(params, batch, spec, categories, eps, store, pair_seed, path_seed):
    if spec.kind == "fro":
        return penalty_fro(params, batch)
    if spec.kind == "n3":
        return penalty_n3(params, batch)
    if spec.kind == "dura":
        return penalty_dura(params, batch)
    if spec.kind == "er":
        pairs = select_pairs(batch, spec.pair_budget, pair_seed)
        value, grads = penalty_er(params, batch, pairs, spec, categories, eps)
        if spec.second_order:
            paths = sample_path_pairs(store, batch, spec.path_budget, path_seed)
            v2, g2 = penalty_er_second_order(params, paths, spec, categories, eps)
            value += v2
            acc = GradAccumulator()
            acc.add_set(grads)
            acc.add_set(g2)
            shapes = {name: arr.shape for name, arr in params.blocks().items()}
            shapes["eps"] = (params.n_relations,)
            grads = acc.finalize(shapes)
        return value, grads
    raise ConfigError(f"unknown regularizer kind {spec.kind!r}")


def batch_objective(
    params: ModelParams,
    batch: np.ndarray,
    spec: RegularizerSpec,
    categories: CategoryMap | None = None,
    eps: EpsilonState | None = None,
    store: TripleStore | None = None,
    pair_seed: int = 0,
    path_seed: int = 1,
):
    """Loss plus scaled penalty for one batch: (total, loss, reg, grads).

    The gradient set covers every parameter block and, for joint-mode
    pair labels, the ``"eps"`` thresholds.  Used by the training loop and
    by finite-difference checks.
    """
    loss, grads_ce = _batch_ce(params, batch)
    acc = GradAccumulator()
    acc.add_set(grads_ce)
    reg_value = 0.0
    if spec.kind != "none" and spec.lam > 0.0:
        reg_value, grads_reg = _penalty(
            params, batch, spec, categories, eps, store, pair_seed, path_seed
        )
        acc.add_set(grads_reg, scale=spec.lam)
    shapes = {name: arr.shape for name, arr in params.blocks().items()}
    shapes["eps"] = (params.n_relations,)
    return loss + spec.lam * reg_value, loss, reg_value, acc.finalize(shapes)


def train(
    config: TrainConfig,
    store: TripleStore,
    categories: CategoryMap | None = None,
):
    """Train a model on the store's train split.

    Returns ``(params, eps_state, history)``.  The store should normally
    be reciprocal-augmented so head prediction trains as tail prediction.
    """
    config.validate()
    kind = ModelKind(config.model)
    spec = config.regularizer
    n_ent = store.vocab.n_entities
    n_rel = store.vocab.n_relations
    params = init_params(kind, n_ent, n_rel, config.dim, config.seed)
    eps_state = EpsilonState.create(n_rel, spec.epsilon_init)
    accs = {name: np.zeros_like(arr) for name, arr in params.blocks().items()}
    eps_acc = eps_state.acc

    filter_index = None
    if config.eval_every > 0 and len(store.valid) > 0:
        filter_index = build_filter_index(store)

    rng = np.random.default_rng(config.seed)
    train_arr = store.train
    n = len(train_arr)
    if n == 0:
        raise ConfigError("empty training split")
    history = TrainHistory()
    best_mrr = -np.inf
    stale = 0

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        loss_sum = 0.0
        reg_sum = 0.0
        n_batches = 0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            batch = train_arr[perm[start : start + config.batch_size]]
            pair_seed = int(
                np.random.SeedSequence([config.seed, epoch, bi, 0]).generate_state(1)[0]
            )
            path_seed = int(
                np.random.SeedSequence([config.seed, epoch, bi, 1]).generate_state(1)[0]
            )
            total, loss, reg_value, grads = batch_objective(
                params, batch, spec, categories, eps_state, store, pair_seed, path_seed
            )
            if not np.isfinite(total) or not all_finite(grads):
                raise NumericError(
                    f"non-finite loss or gradient at epoch {epoch} batch {bi}"
                )
            blocks = params.blocks()
            for name, (idx, garr) in grads.items():
                if name == "eps":
                    _adagrad_step_inplace(
                        eps_state.epsilon, eps_acc, idx, garr,
                        config.learning_rate, config.adagrad_eps,
                    )
                else:
                    _adagrad_step_inplace(
                        blocks[name], accs[name], idx, garr,
                        config.learning_rate, config.adagrad_eps,
                    )
            project_constraints(params)
            loss_sum += loss * len(batch)
            reg_sum += reg_value * len(batch)
            n_batches += 1

        record = EpochRecord(
            epoch=epoch,
            loss=loss_sum / n,
            reg_value=reg_sum / n,
        )
        if (
            filter_index is not None
            and config.eval_every > 0
            and (epoch + 1) % config.eval_every == 0
        ):
            report = evaluate(params, store.valid, filter_index)
            record.valid_mrr = report.mrr
            record.valid_hits1 = report.hits[1]
            record.valid_hits10 = report.hits[10]
            if config.patience is not None:
                if report.mrr > best_mrr + 1e-12:
                    best_mrr = report.mrr
                    stale = 0
                else:
                    stale += 1
                    if stale >= config.patience:
                        record.seconds = time.perf_counter() - t0
                        history.records.append(record)
                        logger.info("early stop at epoch %d", epoch)
                        break
        record.seconds = time.perf_counter() - t0
        history.records.append(record)
    return params, eps_state, history


# ---------------------------------------------------------------------------
# Checkpoints: magic "ERKG", version u32 LE, kind byte, three u64 dims,
# parameter blocks as little-endian float64 in declared order, then the
# epsilon array (one float64 per relation; NaN marks uninitialized).

CHECKPOINT_MAGIC = b"ERKG"
CHECKPOINT_VERSION = 1

_KIND_BYTES = {
    ModelKind.CP: 0,
    ModelKind.DISTMULT: 1,
    ModelKind.COMPLEX: 2,
    ModelKind.RESCAL: 3,
    ModelKind.TRANSE: 4,
    ModelKind.ROTATE: 5,
}
_BYTE_KINDS = {v: k for k, v in _KIND_BYTES.items()}


def save_checkpoint(params: ModelParams, eps: EpsilonState, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<B", _KIND_BYTES[params.kind]))
        fh.write(
            struct.pack("<QQQ", params.n_entities, params.n_relations, params.dim)
        )
        for arr in params.blocks().values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(eps.epsilon, dtype="<f8").tobytes())


def _block_shapes(kind: ModelKind, n_ent: int, n_rel: int, dim: int):
    if kind == ModelKind.CP:
        shapes = [("ent_h", (n_ent, dim)), ("ent_t", (n_ent, dim))]
    else:
        shapes = [("ent", (n_ent, dim))]
    if kind == ModelKind.RESCAL:
        shapes.append(("rel", (n_rel, dim, dim)))
    else:
        shapes.append(("rel", (n_rel, dim)))
    return shapes


def load_checkpoint(path):
    """Read a checkpoint back into ``(ModelParams, EpsilonState)``.

    Optimizer accumulators are not checkpointed; epsilon entries restore
    their initialized flags from NaN-ness.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    header = 4 + 4 + 1 + 24
    if len(raw) < header or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (kind_byte,) = struct.unpack_from("<B", raw, 8)
    if kind_byte not in _BYTE_KINDS:
        raise CheckpointError(f"unknown model kind byte {kind_byte}")
    kind = _BYTE_KINDS[kind_byte]
    n_ent, n_rel, dim = struct.unpack_from("<QQQ", raw, 9)
    shapes = _block_shapes(kind, n_ent, n_rel, dim)
    expected = header + 8 * (
        sum(int(np.prod(s)) for _, s in shapes) + n_rel
    )
    if len(raw) != expected:
        raise CheckpointError(
            f"checkpoint size mismatch: expected {expected} bytes, got {len(raw)}"
        )
    offset = header
    blocks = {}
    for name, shape in shapes:
        count = int(np.prod(shape))
        blocks[name] = (
            np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += 8 * count
    epsilon = np.frombuffer(raw, dtype="<f8", count=n_rel, offset=offset).copy()
    params = ModelParams(
        kind=kind,
        n_entities=int(n_ent),
        n_relations=int(n_rel),
        dim=int(dim),
        entity=blocks.get("ent", blocks.get("ent_h")),
        relation=blocks["rel"],
        entity_tail=blocks.get("ent_t"),
    )
    eps = EpsilonState(
        epsilon=epsilon,
        acc=np.zeros(int(n_rel)),
        initialized=np.isfinite(epsilon),
    )
    return params, eps
