"""Penalty terms and their analytic gradients.

Baselines: squared-norm (``fro``), nuclear 3-norm surrogate (``n3``), and
the duality-induced four-term penalty (``dura``).  The equivariance
penalty (``er``) combines per-triple entity norm terms with per-pair
terms over same-relation head pairs:

    mean_triples[ n(h) + n(t) ]
    + mean_pairs[ a * m(T_r(h_a) - T_r(h_b))
                  + (1 - a) * m(T_r(h_a) + T_r(h_b)) ]

where ``n = m`` is the squared 2-norm (``norm_order=2``) or the cubed
3-norm of entrywise moduli (``norm_order=3``), ``T_r`` is the model's
relational transform, and the label ``a`` comes either from entity
categories (1 if equal, 0 otherwise) or, without categories, from a
logistic relaxation ``sigmoid((eps_r - ||x_a - x_b||) / tau)`` with a
per-relation trainable threshold ``eps_r``.

Such labels make the penalty depend on the raw head embeddings and on
``eps_r``; both paths are included in the returned gradients.
Proximity mode keeps only same-category pairs (difference term),
dissimilarity mode only cross-category pairs (sum term), joint mode keeps
every pair with its soft label.  Pairs touching an unlabeled entity fall
back to the joint labeling (warned once per call) unless strict labels
are requested.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import CategoryMap, TripleStore
from .errors import ConfigError
from .grads import GradAccumulator, GradSet
from .models import (
    COMPLEX_KINDS,
    DIAGONAL_KINDS,
    BILINEAR_KINDS,
    N3_KINDS,
    ModelKind,
    ModelParams,
    cview,
)

logger = logging.getLogger(__name__)

ER_MODES = ("proximity", "dissimilarity", "joint")
REG_KINDS = ("none", "fro", "n3", "dura", "er")

_EPS_DIST = 1e-30


@dataclass
class RegularizerSpec:
    """Configuration of one penalty term.

    ``lam`` is the coefficient applied by the trainer.  ``pair_budget``
    caps sampled pairs per relation per batch; ``dissim_weight`` optionally
    rescales the sum-term relative to the difference term (shared
    coefficient by default).
    """

    kind: str = "none"
    lam: float = 0.0
    er_mode: str = "joint"
    norm_order: int = 2
    pair_budget: int = 32
    second_order: bool = False
    path_budget: int = 32
    tau: float = 1.0
    epsilon_init: float | str = "batch_median"
    dissim_weight: float = 1.0
    strict_labels: bool = False

    def validate(self) -> None:
        if self.kind not in REG_KINDS:
            raise ConfigError(f"unknown regularizer kind {self.kind!r}")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if self.er_mode not in ER_MODES:
            raise ConfigError(f"unknown er_mode {self.er_mode!r}")
        if self.norm_order not in (2, 3):
            raise ConfigError("norm_order must be 2 or 3")
        if self.kind == "er" and self.pair_budget < 1:
            raise ConfigError("pair_budget must be >= 1")
        if self.second_order and self.path_budget < 1:
            raise ConfigError("path_budget must be >= 1")
        if self.tau <= 0:
            raise ConfigError("temperature must be positive")
        if isinstance(self.epsilon_init, str) and self.epsilon_init != "batch_median":
            raise ConfigError(f"unknown epsilon_init {self.epsilon_init!r}")


@dataclass
class EpsilonState:
    """Per-relation similarity thresholds with their Adagrad accumulators.

    Uninitialized entries are NaN; the batch-median policy fills them the
    first time a relation contributes soft-labeled pairs.
    """

    epsilon: np.ndarray
    acc: np.ndarray
    initialized: np.ndarray

    @classmethod
    def create(cls, n_relations: int, init: float | str = "batch_median"):
        if isinstance(init, str):
            if init != "batch_median":
                raise ConfigError(f"unknown epsilon_init {init!r}")
            eps = np.full(n_relations, np.nan)
            mask = np.zeros(n_relations, dtype=bool)
        else:
            eps = np.full(n_relations, float(init))
            mask = np.ones(n_relations, dtype=bool)
        return cls(epsilon=eps, acc=np.zeros(n_relations), initialized=mask)

    def copy(self) -> "EpsilonState":
        return EpsilonState(self.epsilon.copy(), self.acc.copy(), self.initialized.copy())


@dataclass
class PairSet:
    """Sampled same-relation pairs of batch triple positions."""

    idx_a: np.ndarray
    idx_b: np.ndarray
    rel: np.ndarray

    @property
    def n(self) -> int:
        return len(self.rel)


@dataclass
class PathPairSet:
    """Pairs of two-hop path heads sharing both relation ids."""

    head_a: np.ndarray
    head_b: np.ndarray
    rel1: np.ndarray
    rel2: np.ndarray

    @property
    def n(self) -> int:
        return len(self.rel1)


def _sigmoid(u: np.ndarray | float):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=np.float64)))


def _shapes(params: ModelParams) -> dict[str, tuple[int, ...]]:
    shapes = {name: arr.shape for name, arr in params.blocks().items()}
    shapes["eps"] = (params.n_relations,)
    return shapes


def _norm_value_grad(X: np.ndarray, order: int, complexified: bool):
    """Row-wise penalty norms with gradients in real storage.

    order 2: sum of squared entries (equals squared complex moduli).
    order 3: sum of cubed absolute values; complex kinds cube the modulus
    of each complex coordinate.
    """
    X2 = X.reshape(len(X), -1)
    if order == 2:
        return np.sum(X2 * X2, axis=1), 2.0 * X
    if not complexified:
        a = np.abs(X2)
        return np.sum(a * a * a, axis=1), (3.0 * np.abs(X) * X)
    Z = cview(np.ascontiguousarray(X))
    A = np.abs(Z)
    val = np.sum(A**3, axis=1)
    grad = (3.0 * A * Z).view(np.float64)
    return val, grad


def _transform_batch(params: ModelParams, H: np.ndarray, rels: np.ndarray):
    kind = params.kind
    if kind in DIAGONAL_KINDS:
        Rv = params.relation[rels]
        return H * Rv, {"H": H, "Rv": Rv}
    if kind in COMPLEX_KINDS:
        Hc = cview(np.ascontiguousarray(H))
        Rc = cview(np.ascontiguousarray(params.relation[rels]))
        return (Hc * Rc).view(np.float64), {"Hc": Hc, "Rc": Rc}
    if kind == ModelKind.RESCAL:
        Rb = params.relation[rels]
        return np.einsum("bd,bde->be", H, Rb), {"H": H, "Rb": Rb}
    if kind == ModelKind.TRANSE:
        return H + params.relation[rels], {}
    raise ConfigError(f"unknown kind {kind}")


def _transform_backward(params: ModelParams, ctx, G: np.ndarray):
    """Map a gradient on the transform output to (input rows, relation rows)."""
    kind = params.kind
    if kind in DIAGONAL_KINDS:
        return G * ctx["Rv"], G * ctx["H"]
    if kind in COMPLEX_KINDS:
        Gc = cview(np.ascontiguousarray(G))
        GH = (np.conj(ctx["Rc"]) * Gc).view(np.float64)
        GR = (np.conj(ctx["Hc"]) * Gc).view(np.float64)
        return GH, GR
    if kind == ModelKind.RESCAL:
        GH = np.einsum("be,bde->bd", G, ctx["Rb"])
        GR = np.einsum("bd,be->bde", ctx["H"], G)
        return GH, GR
    if kind == ModelKind.TRANSE:
        return G, G.copy()
    raise ConfigError(f"unknown kind {kind}")


# ---------------------------------------------------------------------------
# Baseline penalties.


def _require_batch(batch: np.ndarray) -> None:
    if len(batch) == 0:
        raise ConfigError("penalty needs a nonempty batch")


def penalty_fro(params: ModelParams, batch: np.ndarray):
    """Mean squared norm of head, relation, and tail parameters."""
    _require_batch(batch)
    B = len(batch)
    H = params.head_table[batch[:, 0]]
    Rv = params.relation[batch[:, 1]]
    T = params.tail_table[batch[:, 2]]
    vh, gh = _norm_value_grad(H, 2, False)
    vr, gr = _norm_value_grad(Rv, 2, False)
    vt, gt = _norm_value_grad(T, 2, False)
    value = float((vh + vr + vt).sum() / B)
    acc = GradAccumulator()
    acc.add(params.head_key, batch[:, 0], gh / B)
    acc.add("rel", batch[:, 1], gr / B)
    acc.add(params.tail_key, batch[:, 2], gt / B)
    return value, acc.finalize(_shapes(params))


def penalty_n3(params: ModelParams, batch: np.ndarray):
    """Mean cubed 3-norm of head, relation, and tail vectors.

    Only defined for diagonal bilinear kinds; complex coordinates
    contribute the cube of their modulus.
    """
    if params.kind not in N3_KINDS:
        raise ConfigError(f"n3 penalty does not support {params.kind.value}")
    _require_batch(batch)
    B = len(batch)
    cx = params.kind in COMPLEX_KINDS
    H = params.head_table[batch[:, 0]]
    Rv = params.relation[batch[:, 1]]
    T = params.tail_table[batch[:, 2]]
    vh, gh = _norm_value_grad(H, 3, cx)
    vr, gr = _norm_value_grad(Rv, 3, cx)
    vt, gt = _norm_value_grad(T, 3, cx)
    value = float((vh + vr + vt).sum() / B)
    acc = GradAccumulator()
    acc.add(params.head_key, batch[:, 0], gh / B)
    acc.add("rel", batch[:, 1], gr / B)
    acc.add(params.tail_key, batch[:, 2], gt / B)
    return value, acc.finalize(_shapes(params))


def penalty_dura(params: ModelParams, batch: np.ndarray):
    """Duality-induced penalty: transformed-head, tail, adjoint-transformed
    tail, and head squared norms, averaged over the batch."""
    if params.kind not in BILINEAR_KINDS:
        raise ConfigError(f"dura penalty does not support {params.kind.value}")
    _require_batch(batch)
    B = len(batch)
    kind = params.kind
    heads, rels, tails = batch[:, 0], batch[:, 1], batch[:, 2]
    H = params.head_table[heads]
    T = params.tail_table[tails]

    acc = GradAccumulator()
    if kind in DIAGONAL_KINDS:
        Rv = params.relation[rels]
        Th = H * Rv
        Ta = T * Rv
        value = np.sum(Th * Th) + np.sum(T * T) + np.sum(Ta * Ta) + np.sum(H * H)
        GH = 2.0 * Th * Rv + 2.0 * H
        GT = 2.0 * Ta * Rv + 2.0 * T
        GR = 2.0 * Th * H + 2.0 * Ta * T
    elif kind == ModelKind.COMPLEX:
        Hc = cview(np.ascontiguousarray(H))
        Tc = cview(np.ascontiguousarray(T))
        Rc = cview(np.ascontiguousarray(params.relation[rels]))
        Thc = Hc * Rc
        Tac = Tc * np.conj(Rc)
        value = (
            np.sum(np.abs(Thc) ** 2)
            + np.sum(T * T)
            + np.sum(np.abs(Tac) ** 2)
            + np.sum(H * H)
        )
        GH = (np.conj(Rc) * (2.0 * Thc) + 2.0 * Hc).view(np.float64)
        GT = (Rc * (2.0 * Tac) + 2.0 * Tc).view(np.float64)
        GR = (np.conj(Hc) * (2.0 * Thc) + Tc * np.conj(2.0 * Tac)).view(np.float64)
    else:  # rescal
        Rb = params.relation[rels]
        Th = np.einsum("bd,bde->be", H, Rb)
        Ta = np.einsum("be,bde->bd", T, Rb)
        value = np.sum(Th * Th) + np.sum(T * T) + np.sum(Ta * Ta) + np.sum(H * H)
        GH = 2.0 * np.einsum("be,bde->bd", Th, Rb) + 2.0 * H
        GT = 2.0 * np.einsum("bd,bde->be", Ta, Rb) + 2.0 * T
        GR = 2.0 * np.einsum("bd,be->bde", H, Th) + 2.0 * np.einsum(
            "bd,be->bde", Ta, T
        )
    acc.add(params.head_key, heads, GH / B)
    acc.add(params.tail_key, tails, GT / B)
    acc.add("rel", rels, GR / B)
    return float(value / B), acc.finalize(_shapes(params))


# ---------------------------------------------------------------------------
# Pair sampling and labeling.


def select_pairs(batch: np.ndarray, budget: int, seed: int) -> PairSet:
    """Sample same-relation pairs of batch triples with distinct heads.

    Triples are grouped by relation in first-appearance order; each
    group's unordered pairs are enumerated and at most ``budget`` of them
    kept (uniform, without replacement).  Deterministic given the batch
    order and seed.
    """
    if budget < 1:
        raise ConfigError("pair budget must be >= 1")
    rng = np.random.default_rng(seed)
    order: list[int] = []
    groups: dict[int, list[int]] = {}
    for pos, rel in enumerate(batch[:, 1]):
        rel = int(rel)
        if rel not in groups:
            groups[rel] = []
            order.append(rel)
        groups[rel].append(pos)
    idx_a, idx_b, rels = [], [], []
    for rel in order:
        positions = groups[rel]
        eligible = [
            (positions[i], positions[j])
            for i in range(len(positions))
            for j in range(i + 1, len(positions))
            if batch[positions[i], 0] != batch[positions[j], 0]
        ]
        if len(eligible) > budget:
            chosen = np.sort(rng.choice(len(eligible), size=budget, replace=False))
            eligible = [eligible[c] for c in chosen]
        for a, b in eligible:
            idx_a.append(a)
            idx_b.append(b)
            rels.append(rel)
    return PairSet(
        idx_a=np.array(idx_a, dtype=np.int64),
        idx_b=np.array(idx_b, dtype=np.int64),
        rel=np.array(rels, dtype=np.int64),
    )


def pair_label(
    params: ModelParams,
    h_a: int,
    h_b: int,
    r: int,
    mode: str,
    categories: CategoryMap | None = None,
    eps: EpsilonState | None = None,
    tau: float = 1.0,
    strict: bool = False,
) -> float:
    """Soft similarity label for one same-relation head pair.

    Category modes return 1.0 for equal labels and 0.0 otherwise; with an
    unlabeled entity they fall back to the joint labeling (warned) unless
    ``strict``.  Joint mode returns
    ``sigmoid((eps_r - ||x_a - x_b||) / tau)`` and requires an initialized
    threshold.
    """
    if mode not in ER_MODES:
        raise ConfigError(f"unknown er_mode {mode!r}")
    if mode != "joint":
        ca = categories.get(h_a) if categories is not None else None
        cb = categories.get(h_b) if categories is not None else None
        if ca is not None and cb is not None:
            return 1.0 if ca == cb else 0.0
        if strict:
            raise ConfigError(
                f"entities {h_a}/{h_b} lack category labels in {mode} mode"
            )
        logger.warning("unlabeled pair (%d, %d): falling back to joint label", h_a, h_b)
    if eps is None or not eps.initialized[r]:
        raise ConfigError(f"epsilon for relation {r} is not initialized")
    dist = float(np.linalg.norm(params.head_table[h_a] - params.head_table[h_b]))
    return float(_sigmoid((eps.epsilon[r] - dist) / tau))


def _init_epsilon(eps: EpsilonState, rels: np.ndarray, dists: np.ndarray) -> None:
    """Batch-median initialization for relations first seen in a pair set."""
    for r in np.unique(rels):
        if not eps.initialized[r]:
            eps.epsilon[r] = float(np.median(dists[rels == r]))
            eps.initialized[r] = True


class _LabeledPairs:
    """Kept pairs with labels plus the bookkeeping for label gradients."""

    def __init__(self, ha, hb, rel, label, joint_mask, dists, diffs):
        self.ha = ha
        self.hb = hb
        self.rel = rel
        self.label = label
        self.joint_mask = joint_mask
        self.dists = dists
        self.diffs = diffs

    @property
    def n(self) -> int:
        return len(self.rel)


def _label_pair_entities(
    params: ModelParams,
    ha: np.ndarray,
    hb: np.ndarray,
    rel: np.ndarray,
    spec: RegularizerSpec,
    categories: CategoryMap | None,
    eps: EpsilonState | None,
) -> tuple[_LabeledPairs, np.ndarray]:
    mode = spec.er_mode
    n = len(rel)
    if mode == "joint":
        keep = np.ones(n, dtype=bool)
        hard = np.full(n, -1.0)
        joint = np.ones(n, dtype=bool)
    else:
        if categories is not None:
            la = categories.labels_for(ha)
            lb = categories.labels_for(hb)
        else:
            la = np.full(n, -1, dtype=np.int64)
            lb = la
        both = (la >= 0) & (lb >= 0)
        same = both & (la == lb)
        joint = ~both
        if joint.any():
            if spec.strict_labels:
                raise ConfigError("pair with unlabeled entity in category mode")
            logger.warning(
                "%d pairs lack category labels; using joint labels", int(joint.sum())
            )
        if mode == "proximity":
            keep = same | joint
        else:
            keep = (both & ~same) | joint
        hard = np.where(same, 1.0, 0.0)

    ha, hb, rel = ha[keep], hb[keep], rel[keep]
    hard, joint = hard[keep], joint[keep]
    label = hard.copy()
    dists = np.zeros(len(rel))
    diffs = np.zeros((len(rel), params.dim))
    if joint.any():
        if eps is None:
            raise ConfigError("joint labeling requires an EpsilonState")
        d = params.head_table[ha[joint]] - params.head_table[hb[joint]]
        dd = np.sqrt(np.sum(d * d, axis=1))
        _init_epsilon(eps, rel[joint], dd)
        label[joint] = _sigmoid((eps.epsilon[rel[joint]] - dd) / spec.tau)
        dists[joint] = dd
        diffs[joint] = d
    return _LabeledPairs(ha, hb, rel, label, joint, dists, diffs), keep


# ---------------------------------------------------------------------------
# Equivariance penalty.


def penalty_er(
    params: ModelParams,
    batch: np.ndarray,
    pairs: PairSet,
    spec: RegularizerSpec,
    categories: CategoryMap | None = None,
    eps: EpsilonState | None = None,
):
    """Entity norm terms plus labeled pair terms, with gradients.

    Gradients cover embeddings, relation parameters, and (through the soft
    labels) the per-relation thresholds under the ``"eps"`` key.  May
    initialize thresholds as a side effect (batch-median policy).
    """
    if spec.kind != "er":
        raise ConfigError("spec.kind must be 'er'")
    _require_batch(batch)
    B = len(batch)
    cx = params.kind in COMPLEX_KINDS
    order = spec.norm_order
    acc = GradAccumulator()

    H = params.head_table[batch[:, 0]]
    T = params.tail_table[batch[:, 2]]
    vh, gh = _norm_value_grad(H, order, cx)
    vt, gt = _norm_value_grad(T, order, cx)
    value = float((vh + vt).sum() / B)
    acc.add(params.head_key, batch[:, 0], gh / B)
    acc.add(params.tail_key, batch[:, 2], gt / B)

    if pairs.n > 0:
        lp, _ = _label_pair_entities(
            params,
            batch[pairs.idx_a, 0],
            batch[pairs.idx_b, 0],
            pairs.rel,
            spec,
            categories,
            eps,
        )
        if lp.n > 0:
            P = lp.n
            wd = spec.dissim_weight
            Ha = params.head_table[lp.ha]
            Hb = params.head_table[lp.hb]
            Ta, ctx_a = _transform_batch(params, Ha, lp.rel)
            Tb, ctx_b = _transform_batch(params, Hb, lp.rel)
            vd, gd = _norm_value_grad(Ta - Tb, order, cx)
            vs, gs = _norm_value_grad(Ta + Tb, order, cx)
            a = lp.label
            value += float(np.sum(a * vd + (1.0 - a) * wd * vs) / P)

            ga = (a[:, None] * gd + ((1.0 - a) * wd)[:, None] * gs) / P
            gb = (-a[:, None] * gd + ((1.0 - a) * wd)[:, None] * gs) / P
            GHa, GRa = _transform_backward(params, ctx_a, ga)
            GHb, GRb = _transform_backward(params, ctx_b, gb)
            acc.add(params.head_key, lp.ha, GHa)
            acc.add(params.head_key, lp.hb, GHb)
            acc.add("rel", lp.rel, GRa)
            acc.add("rel", lp.rel, GRb)

            if lp.joint_mask.any():
                jm = lp.joint_mask
                dfda = (vd - wd * vs)[jm] / P
                slope = a[jm] * (1.0 - a[jm]) / spec.tau
                acc.add("eps", lp.rel[jm], dfda * slope)
                unit = lp.diffs[jm] / np.maximum(lp.dists[jm], _EPS_DIST)[:, None]
                gx = -(dfda * slope)[:, None] * unit
                acc.add(params.head_key, lp.ha[jm], gx)
                acc.add(params.head_key, lp.hb[jm], -gx)
    return value, acc.finalize(_shapes(params))


def sample_path_pairs(
    store: TripleStore, batch: np.ndarray, budget: int, seed: int
) -> PathPairSet:
    """Pair two-hop paths that share both relations.

    Each batch triple (h, r1, m) is extended by training continuations
    (m, r2, e); paths are grouped by (r1, r2) and at most ``budget`` pairs
    with distinct heads kept per group.  Deterministic given the seed.
    """
    if budget < 1:
        raise ConfigError("path budget must be >= 1")
    adj = getattr(store, "_adjacency", None)
    if adj is None:
        adj = {}
        for h, r, t in store.train:
            adj.setdefault(int(h), []).append((int(r), int(t)))
        store._adjacency = adj

    rng = np.random.default_rng(seed)
    order: list[tuple[int, int]] = []
    groups: dict[tuple[int, int], list[int]] = {}
    for h, r1, m in batch:
        for r2, _e in adj.get(int(m), ()):
            key = (int(r1), r2)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(int(h))

    ha, hb, rel1, rel2 = [], [], [], []
    for key in order:
        heads = groups[key]
        eligible = [
            (heads[i], heads[j])
            for i in range(len(heads))
            for j in range(i + 1, len(heads))
            if heads[i] != heads[j]
        ]
        if len(eligible) > budget:
            chosen = np.sort(rng.choice(len(eligible), size=budget, replace=False))
            eligible = [eligible[c] for c in chosen]
        for a, b in eligible:
            ha.append(a)
            hb.append(b)
            rel1.append(key[0])
            rel2.append(key[1])
    return PathPairSet(
        head_a=np.array(ha, dtype=np.int64),
        head_b=np.array(hb, dtype=np.int64),
        rel1=np.array(rel1, dtype=np.int64),
        rel2=np.array(rel2, dtype=np.int64),
    )


def penalty_er_second_order(
    params: ModelParams,
    path_pairs: PathPairSet,
    spec: RegularizerSpec,
    categories: CategoryMap | None = None,
    eps: EpsilonState | None = None,
):
    """Mean labeled difference of doubly-transformed path heads.

    Labels follow the first-order policy applied to the path heads, with
    the first relation's threshold in joint mode.  Added by the trainer to
    the first-order total.
    """
    if path_pairs.n == 0:
        return 0.0, {}
    cx = params.kind in COMPLEX_KINDS
    lp, keep = _label_pair_entities(
        params, path_pairs.head_a, path_pairs.head_b, path_pairs.rel1, spec,
        categories, eps,
    )
    if lp.n == 0:
        return 0.0, {}
    rel2 = path_pairs.rel2[keep]
    acc = GradAccumulator()
    P = lp.n

    Ha = params.head_table[lp.ha]
    Hb = params.head_table[lp.hb]
    Ua, ctx1a = _transform_batch(params, Ha, lp.rel)
    Ub, ctx1b = _transform_batch(params, Hb, lp.rel)
    Va, ctx2a = _transform_batch(params, Ua, rel2)
    Vb, ctx2b = _transform_batch(params, Ub, rel2)
    vd, gd = _norm_value_grad(Va - Vb, spec.norm_order, cx)
    a = lp.label
    value = float(np.sum(a * vd) / P)

    ga = a[:, None] * gd / P
    GUa, GR2a = _transform_backward(params, ctx2a, ga)
    GUb, GR2b = _transform_backward(params, ctx2b, -ga)
    GHa, GR1a = _transform_backward(params, ctx1a, GUa)
    GHb, GR1b = _transform_backward(params, ctx1b, GUb)
    acc.add(params.head_key, lp.ha, GHa)
    acc.add(params.head_key, lp.hb, GHb)
    acc.add("rel", lp.rel, GR1a)
    acc.add("rel", lp.rel, GR1b)
    acc.add("rel", rel2, GR2a)
    acc.add("rel", rel2, GR2b)

    if lp.joint_mask.any():
        jm = lp.joint_mask
        dfda = vd[jm] / P
        slope = a[jm] * (1.0 - a[jm]) / spec.tau
        acc.add("eps", lp.rel[jm], dfda * slope)
        unit = lp.diffs[jm] / np.maximum(lp.dists[jm], _EPS_DIST)[:, None]
        gx = -(dfda * slope)[:, None] * unit
        acc.add(params.head_key, lp.ha[jm], gx)
        acc.add(params.head_key, lp.hb[jm], -gx)
    return value, acc.finalize(_shapes(params))
