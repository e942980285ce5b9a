"""Embedding tables, score functions, relational transforms, and analytic
gradients for six link-prediction model families.

The bilinear family (``cp``, ``distmult``, ``complex``, ``rescal``) scores
a triple as ``Re(conj(h) . R . t)``; the distance family (``transe``,
``rotate``) scores ``-||T_r(h) - t||_2``.  Complex-valued kinds store
``dim/2`` complex coordinates as interleaved (real, imag) float64 pairs,
so every parameter block is a plain real array.

Gradients for interleaved blocks are taken with respect to the real
storage and packed back into complex arrays as
``G = df/d(re) + i * df/d(im)``.  With that convention the chain rules for
a real-valued ``f`` are

    c = a * b        ->  G_a = conj(b) * G_c,   G_b = conj(a) * G_c
    c = conj(a)      ->  G_a = conj(G_c)
    f = Re(sum w*t)  ->  G_w = conj(t),         G_t = conj(w)

and ``G.view(float64)`` is exactly the gradient of the interleaved
storage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError

logger = logging.getLogger(__name__)


class ModelKind(str, Enum):
    CP = "cp"
    DISTMULT = "distmult"
    COMPLEX = "complex"
    RESCAL = "rescal"
    TRANSE = "transe"
    ROTATE = "rotate"


BILINEAR_KINDS = frozenset(
    {ModelKind.CP, ModelKind.DISTMULT, ModelKind.COMPLEX, ModelKind.RESCAL}
)
DIAGONAL_KINDS = frozenset({ModelKind.CP, ModelKind.DISTMULT})
COMPLEX_KINDS = frozenset({ModelKind.COMPLEX, ModelKind.ROTATE})
DISTANCE_KINDS = frozenset({ModelKind.TRANSE, ModelKind.ROTATE})
N3_KINDS = frozenset({ModelKind.CP, ModelKind.DISTMULT, ModelKind.COMPLEX})


def cview(a: np.ndarray) -> np.ndarray:
    """View interleaved (re, im) float64 pairs as complex128."""
    return a.view(np.complex128)


@dataclass
class ModelParams:
    """Parameter blocks for one model.

    ``entity`` is the (single or head-role) entity table, ``entity_tail``
    the tail-role table (cp only), ``relation`` the per-relation
    parameters: a diagonal vector (cp/distmult), an interleaved complex
    diagonal (complex/rotate), a full matrix (rescal), or a translation
    vector (transe).
    """

    kind: ModelKind
    n_entities: int
    n_relations: int
    dim: int
    entity: np.ndarray
    relation: np.ndarray
    entity_tail: np.ndarray | None = None

    def blocks(self) -> dict[str, np.ndarray]:
        """Parameter blocks in declared (checkpoint) order."""
        if self.kind == ModelKind.CP:
            return {"ent_h": self.entity, "ent_t": self.entity_tail, "rel": self.relation}
        return {"ent": self.entity, "rel": self.relation}

    @property
    def head_key(self) -> str:
        return "ent_h" if self.kind == ModelKind.CP else "ent"

    @property
    def tail_key(self) -> str:
        return "ent_t" if self.kind == ModelKind.CP else "ent"

    @property
    def head_table(self) -> np.ndarray:
        return self.entity

    @property
    def tail_table(self) -> np.ndarray:
        return self.entity_tail if self.kind == ModelKind.CP else self.entity

    def copy(self) -> "ModelParams":
        return ModelParams(
            kind=self.kind,
            n_entities=self.n_entities,
            n_relations=self.n_relations,
            dim=self.dim,
            entity=self.entity.copy(),
            relation=self.relation.copy(),
            entity_tail=None if self.entity_tail is None else self.entity_tail.copy(),
        )


def init_params(
    kind: ModelKind, n_entities: int, n_relations: int, dim: int, seed: int
) -> ModelParams:
    """Seeded i.i.d. uniform [-1/sqrt(d), +1/sqrt(d)] initialization.

    Rotation phases are drawn uniform on [0, 2pi) and stored as unit
    complex numbers.  Complex kinds require an even ``dim``.
    """
    kind = ModelKind(kind)
    if kind in COMPLEX_KINDS and dim % 2 != 0:
        raise ConfigError(f"{kind.value} requires an even dim, got {dim}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(dim)

    def table(*shape):
        return rng.uniform(-bound, bound, size=shape)

    entity = table(n_entities, dim)
    entity_tail = table(n_entities, dim) if kind == ModelKind.CP else None
    if kind == ModelKind.RESCAL:
        relation = table(n_relations, dim, dim)
    elif kind == ModelKind.ROTATE:
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_relations, dim // 2))
        relation = np.empty((n_relations, dim))
        relation[:, 0::2] = np.cos(phases)
        relation[:, 1::2] = np.sin(phases)
    else:
        relation = table(n_relations, dim)
    return ModelParams(
        kind=kind,
        n_entities=n_entities,
        n_relations=n_relations,
        dim=dim,
        entity=entity,
        relation=relation,
        entity_tail=entity_tail,
    )


def _check_ids(params: ModelParams, h: int, r: int, t: int) -> None:
    if not (0 <= h < params.n_entities and 0 <= t < params.n_entities):
        raise IndexError(f"entity id out of range: h={h}, t={t}")
    if not 0 <= r < params.n_relations:
        raise IndexError(f"relation id out of range: r={r}")


def score(params: ModelParams, h: int, r: int, t: int) -> float:
    """Scalar score of one triple."""
    _check_ids(params, h, r, t)
    kind = params.kind
    hv = params.head_table[h]
    tv = params.tail_table[t]
    if kind in DIAGONAL_KINDS:
        return float(np.dot(hv * params.relation[r], tv))
    if kind == ModelKind.COMPLEX:
        hc, rc, tc = cview(hv), cview(params.relation[r]), cview(tv)
        return float(np.sum(np.conj(hc) * rc * tc).real)
    if kind == ModelKind.RESCAL:
        return float(hv @ params.relation[r] @ tv)
    if kind == ModelKind.TRANSE:
        return float(-np.linalg.norm(hv + params.relation[r] - tv))
    if kind == ModelKind.ROTATE:
        hc, rc, tc = cview(hv), cview(params.relation[r]), cview(tv)
        return float(-np.linalg.norm(hc * rc - tc))
    raise ConfigError(f"unknown kind {kind}")


def relational_transform(params: ModelParams, x: np.ndarray, r: int) -> np.ndarray:
    """Apply relation ``r`` to an embedding vector (real storage in/out)."""
    if x.shape != (params.dim,):
        raise ValueError(f"expected shape ({params.dim},), got {x.shape}")
    kind = params.kind
    if kind in DIAGONAL_KINDS:
        return x * params.relation[r]
    if kind in COMPLEX_KINDS:
        out = cview(np.ascontiguousarray(x)) * cview(params.relation[r])
        return out.view(np.float64)
    if kind == ModelKind.RESCAL:
        return x @ params.relation[r]
    if kind == ModelKind.TRANSE:
        return x + params.relation[r]
    raise ConfigError(f"unknown kind {kind}")


def project_constraints(params: ModelParams) -> ModelParams:
    """Renormalize rotation relation coordinates to unit modulus (in place).

    Zero-modulus coordinates are reset to 1+0i with a warning.  No-op for
    every other kind.
    """
    if params.kind != ModelKind.ROTATE:
        return params
    rc = cview(params.relation)
    mod = np.abs(rc)
    zero = mod == 0.0
    if zero.any():
        logger.warning("reset %d zero-modulus rotation coordinates", int(zero.sum()))
        rc[zero] = 1.0 + 0.0j
        mod[zero] = 1.0
    rc /= mod
    return params


# ---------------------------------------------------------------------------
# Batched 1-vs-all scoring kernels.
#
# forward_all_tails computes the B x |E| score matrix for a batch of
# (head, relation) queries together with a context reused by
# backward_all_tails, which turns an arbitrary upstream gradient G
# (B x |E|) into per-block gradients.  Gradients come back as
# {block: (row_indices | None, array)}: None marks a dense full-table
# gradient, otherwise ``array`` holds one gradient row per index (indices
# may repeat and must be scatter-added).

_EPS_DIST = 1e-30


def forward_all_tails(params: ModelParams, heads: np.ndarray, rels: np.ndarray):
    """Score every entity as tail for each (head, relation) query."""
    kind = params.kind
    H = params.head_table[heads]
    T = params.tail_table
    ctx = {"heads": heads, "rels": rels}
    if kind in DIAGONAL_KINDS:
        W = H * params.relation[rels]
        S = W @ T.T
        ctx.update(H=H, W=W)
    elif kind == ModelKind.COMPLEX:
        Hc = cview(H)
        Rc = cview(params.relation[rels])
        Wc = np.conj(Hc) * Rc
        S = (Wc @ cview(T).T).real
        ctx.update(Hc=Hc, Rc=Rc, Wc=Wc)
    elif kind == ModelKind.RESCAL:
        Rb = params.relation[rels]
        HR = np.einsum("bd,bde->be", H, Rb)
        S = HR @ T.T
        ctx.update(H=H, Rb=Rb, HR=HR)
    elif kind == ModelKind.TRANSE:
        Z = H + params.relation[rels]
        d2 = (
            np.sum(Z * Z, axis=1)[:, None]
            + np.sum(T * T, axis=1)[None, :]
            - 2.0 * (Z @ T.T)
        )
        D = np.sqrt(np.maximum(d2, 0.0))
        S = -D
        ctx.update(Z=Z, D=D)
    elif kind == ModelKind.ROTATE:
        Hc = cview(H)
        Rc = cview(params.relation[rels])
        Zc = Hc * Rc
        Z = Zc.view(np.float64)
        d2 = (
            np.sum(Z * Z, axis=1)[:, None]
            + np.sum(T * T, axis=1)[None, :]
            - 2.0 * (Z @ T.T)
        )
        D = np.sqrt(np.maximum(d2, 0.0))
        S = -D
        ctx.update(Hc=Hc, Rc=Rc, Zc=Zc, D=D)
    else:
        raise ConfigError(f"unknown kind {kind}")
    return S, ctx


def backward_all_tails(params: ModelParams, ctx, G: np.ndarray):
    """Backpropagate an upstream B x |E| gradient through forward_all_tails."""
    kind = params.kind
    heads, rels = ctx["heads"], ctx["rels"]
    T = params.tail_table
    grads: dict[str, tuple[np.ndarray | None, np.ndarray]] = {}
    if kind in DIAGONAL_KINDS:
        W, H = ctx["W"], ctx["H"]
        GT = G.T @ W
        GW = G @ T
        GH = GW * params.relation[rels]
        GR = GW * H
        if kind == ModelKind.CP:
            grads["ent_t"] = (None, GT)
            grads["ent_h"] = (heads, GH)
        else:
            np.add.at(GT, heads, GH)
            grads["ent"] = (None, GT)
        grads["rel"] = (rels, GR)
    elif kind == ModelKind.COMPLEX:
        Hc, Rc, Wc = ctx["Hc"], ctx["Rc"], ctx["Wc"]
        Tc = cview(T)
        GW = G @ np.conj(Tc)
        GT = G.T @ np.conj(Wc)
        GH = Rc * np.conj(GW)
        GR = Hc * GW
        GTr = np.ascontiguousarray(GT).view(np.float64)
        np.add.at(GTr, heads, np.ascontiguousarray(GH).view(np.float64))
        grads["ent"] = (None, GTr)
        grads["rel"] = (rels, np.ascontiguousarray(GR).view(np.float64))
    elif kind == ModelKind.RESCAL:
        H, Rb, HR = ctx["H"], ctx["Rb"], ctx["HR"]
        GHR = G @ T
        GT = G.T @ HR
        GH = np.einsum("be,bde->bd", GHR, Rb)
        GRb = np.einsum("bd,be->bde", H, GHR)
        np.add.at(GT, heads, GH)
        grads["ent"] = (None, GT)
        grads["rel"] = (rels, GRb)
    elif kind == ModelKind.TRANSE:
        Z, D = ctx["Z"], ctx["D"]
        C = G / np.maximum(D, _EPS_DIST)
        cs1 = C.sum(axis=1)
        cs0 = C.sum(axis=0)
        GZ = C @ T - cs1[:, None] * Z
        GT = C.T @ Z - cs0[:, None] * T
        np.add.at(GT, heads, GZ)
        grads["ent"] = (None, GT)
        grads["rel"] = (rels, GZ)
    elif kind == ModelKind.ROTATE:
        Hc, Rc, Zc, D = ctx["Hc"], ctx["Rc"], ctx["Zc"], ctx["D"]
        Tc = cview(T)
        C = G / np.maximum(D, _EPS_DIST)
        cs1 = C.sum(axis=1)
        cs0 = C.sum(axis=0)
        GZ = C @ Tc - cs1[:, None] * Zc
        GT = C.T @ Zc - cs0[:, None] * Tc
        GH = np.conj(Rc) * GZ
        GR = np.conj(Hc) * GZ
        GTr = np.ascontiguousarray(GT).view(np.float64)
        np.add.at(GTr, heads, np.ascontiguousarray(GH).view(np.float64))
        grads["ent"] = (None, GTr)
        grads["rel"] = (rels, np.ascontiguousarray(GR).view(np.float64))
    else:
        raise ConfigError(f"unknown kind {kind}")
    return grads


def score_all_tails(params: ModelParams, h: int, r: int) -> np.ndarray:
    """All-entity tail scores for one (head, relation) query.

    Agrees with the scalar ``score`` path to within 1e-10 relative
    (summation-order differences; distance kinds use the Gram expansion
    of the squared distance).
    """
    _check_ids(params, h, r, 0)
    S, _ = forward_all_tails(
        params, np.array([h], dtype=np.int64), np.array([r], dtype=np.int64)
    )
    return S[0]


def score_gradients(params: ModelParams, h: int, r: int, t: int):
    """Per-block gradients of the scalar score (used by gradient checks)."""
    _check_ids(params, h, r, t)
    _, ctx = forward_all_tails(
        params, np.array([h], dtype=np.int64), np.array([r], dtype=np.int64)
    )
    G = np.zeros((1, params.n_entities))
    G[0, t] = 1.0
    return backward_all_tails(params, ctx, G)
