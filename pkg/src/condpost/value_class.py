"""Finite Q-function classes F = F_1 x ... x F_H with stagewise priors.

A member tuple f is a sequence of indices, one per step, into the per-step
member lists. F_{H+1} is implicitly the single zero function, so every
"next-step" axis below has length 1 at the last step.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import EmptyCoverSet, InvalidClass, NegativeValue
from .mdp import DeterministicPolicy, TabularMdp, bellman_apply, optimal_values

MemberIndexTuple = tuple[int, ...]

# Slack for "within epsilon" comparisons between tables built along different
# floating-point paths (e.g. phi @ w versus r + P @ max f).
SET_ATOL = 1e-10
_PRIOR_TOL = 1e-12


@dataclass(frozen=True)
class Link:
    """Link function of a generalized linear class; `identity` gives a linear class.

    `sigmoid-like` is the logistic curve 1 / (1 + exp(-scale * z)). When k and K
    are omitted they are filled in from the range of <phi, w> actually used.
    """

    kind: str = "identity"
    scale: float = 1.0
    k: float | None = None
    K: float | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "sigmoid-like"):
            raise InvalidClass(f"link.type: unknown link {self.kind!r}")

    def __call__(self, z):
        if self.kind == "identity":
            return np.asarray(z, dtype=float)
        return 1.0 / (1.0 + np.exp(-self.scale * np.asarray(z, dtype=float)))

    def derivative(self, z):
        if self.kind == "identity":
            return np.ones_like(np.asarray(z, dtype=float))
        s = self(z)
        return self.scale * s * (1.0 - s)

    def lipschitz_range(self, z_min: float, z_max: float) -> tuple[float, float]:
        if self.kind == "identity":
            return 1.0, 1.0
        lo = self.derivative(np.array([z_min, z_max])).min()
        hi = self.derivative(np.clip(0.0, z_min, z_max))
        return float(lo), float(hi)

    def to_dict(self) -> dict:
        doc = {"type": self.kind}
        if self.kind != "identity":
            doc["scale"] = self.scale
        if self.k is not None:
            doc["k"] = self.k
        if self.K is not None:
            doc["K"] = self.K
        return doc


@dataclass(frozen=True, eq=False)
class FeatureBacking:
    features: np.ndarray  # (X, A, d)
    weights: tuple[np.ndarray, ...]  # per step (n_h, d)
    link: Link = field(default_factory=Link)

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    @property
    def linear(self) -> bool:
        return self.link.kind == "identity"


@dataclass(frozen=True, eq=False)
class QFunctionClass:
    members: tuple[np.ndarray, ...]  # per step (n_h, X, A)
    priors: tuple[np.ndarray, ...]  # per step (n_h,)
    declared_b: float | None = None
    backing: FeatureBacking | None = None

    def __post_init__(self):
        if len(self.members) == 0:
            raise InvalidClass("members: class must cover at least one step")
        if len(self.priors) != len(self.members):
            raise InvalidClass(
                f"prior: {len(self.priors)} stages given for {len(self.members)} member stages"
            )
        members, priors = [], []
        shape = None
        for h, (m, p) in enumerate(zip(self.members, self.priors)):
            m = np.array(m, dtype=float)
            p = np.array(p, dtype=float)
            if m.ndim != 3 or m.shape[0] == 0:
                raise InvalidClass(f"members[{h}]: expected a non-empty (n, X, A) array")
            if shape is None:
                shape = m.shape[1:]
            elif m.shape[1:] != shape:
                raise InvalidClass(f"members[{h}]: (X, A) = {m.shape[1:]} differs from {shape}")
            if not np.all(np.isfinite(m)):
                raise InvalidClass(f"members[{h}]: non-finite value")
            if p.shape != (m.shape[0],):
                raise InvalidClass(f"prior[{h}]: expected {m.shape[0]} entries, got {p.shape}")
            if np.any(p < 0) or abs(p.sum() - 1.0) > _PRIOR_TOL:
                raise InvalidClass(f"prior[{h}]: not a probability vector (sum={p.sum()!r})")
            m.setflags(write=False)
            p.setflags(write=False)
            members.append(m)
            priors.append(p)
        if self.declared_b is not None and self.declared_b < 1:
            raise InvalidClass(f"bound_b: must be >= 1, got {self.declared_b!r}")
        object.__setattr__(self, "members", tuple(members))
        object.__setattr__(self, "priors", tuple(priors))

    # -- construction -------------------------------------------------------

    @classmethod
    def from_tables(
        cls,
        members: Sequence[np.ndarray],
        priors: Sequence[np.ndarray] | None = None,
        bound_b: float | None = None,
    ) -> QFunctionClass:
        if priors is None:
            priors = [np.full(len(m), 1.0 / len(m)) for m in members]
        return cls(tuple(members), tuple(priors), bound_b)

    @classmethod
    def from_features(
        cls,
        features: np.ndarray,
        weights: Sequence[np.ndarray],
        link: Link | None = None,
        priors: Sequence[np.ndarray] | None = None,
        bound_b: float | None = None,
    ) -> QFunctionClass:
        link = link or Link()
        phi = np.array(features, dtype=float)
        if phi.ndim != 3:
            raise InvalidClass(f"features: expected (X, A, d), got shape {phi.shape}")
        ws = []
        for h, w in enumerate(weights):
            w = np.array(w, dtype=float)
            if w.ndim != 2 or w.shape[1] != phi.shape[2]:
                raise InvalidClass(f"weights[{h}]: expected (n, {phi.shape[2]}), got {w.shape}")
            ws.append(w)
        z = [np.einsum("xad,nd->nxa", phi, w) for w in ws]
        if link.kind != "identity" and (link.k is None or link.K is None):
            z_all = np.concatenate([zz.ravel() for zz in z])
            k, K = link.lipschitz_range(z_all.min(), z_all.max())
            link = Link(link.kind, link.scale, link.k if link.k is not None else k,
                        link.K if link.K is not None else K)
        members = [link(zz) for zz in z]
        if priors is None:
            priors = [np.full(len(m), 1.0 / len(m)) for m in members]
        backing = FeatureBacking(phi, tuple(ws), link)
        return cls(tuple(members), tuple(priors), bound_b, backing)

    # -- shape --------------------------------------------------------------

    @property
    def horizon(self) -> int:
        return len(self.members)

    @property
    def num_states(self) -> int:
        return self.members[0].shape[1]

    @property
    def num_actions(self) -> int:
        return self.members[0].shape[2]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(m) for m in self.members)

    @property
    def num_tuples(self) -> int:
        return int(np.prod(self.sizes, dtype=object))

    def next_sizes(self) -> tuple[int, ...]:
        """|F_{h+1}| for each h, with |F_{H+1}| = 1."""
        return self.sizes[1:] + (1,)

    @cached_property
    def state_values(self) -> tuple[np.ndarray, ...]:
        """f^h(x) = max_a f^h(x, a), per step shape (n_h, X)."""
        return tuple(m.max(axis=2) for m in self.members)

    @cached_property
    def log_priors(self) -> tuple[np.ndarray, ...]:
        with np.errstate(divide="ignore"):
            return tuple(np.log(p) for p in self.priors)

    @property
    def bound_b(self) -> float:
        """Declared b if given, else the smallest b >= 1 covering every member value."""
        if self.declared_b is not None:
            return float(self.declared_b)
        return max(1.0, 1.0 + max(float(m.max()) for m in self.members))

    def tuple_tables(self, f: MemberIndexTuple) -> np.ndarray:
        check_tuple(self, f)
        return np.stack([self.members[h][i] for h, i in enumerate(f)])

    def matches(self, mdp: TabularMdp) -> None:
        if (self.horizon, self.num_states, self.num_actions) != (
            mdp.horizon, mdp.num_states, mdp.num_actions
        ):
            raise InvalidClass(
                f"class shape (H, X, A) = {(self.horizon, self.num_states, self.num_actions)} "
                f"does not match MDP {(mdp.horizon, mdp.num_states, mdp.num_actions)}"
            )

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        doc: dict = {}
        if self.backing is not None:
            doc["features"] = self.backing.features.tolist()
            doc["weights"] = [w.tolist() for w in self.backing.weights]
            doc["link"] = self.backing.link.to_dict()
        else:
            doc["members"] = [m.tolist() for m in self.members]
        doc["prior"] = [p.tolist() for p in self.priors]
        if self.declared_b is not None:
            doc["bound_b"] = self.declared_b
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> QFunctionClass:
        priors = doc.get("prior")
        bound_b = doc.get("bound_b")
        try:
            if "members" in doc:
                members = [np.asarray(m, dtype=float) for m in doc["members"]]
                return cls.from_tables(members, priors, bound_b)
            if "features" in doc and "weights" in doc:
                spec = dict(doc.get("link") or {"type": "identity"})
                link = Link(spec.get("type", "identity"), float(spec.get("scale", 1.0)),
                            spec.get("k"), spec.get("K"))
                return cls.from_features(
                    np.asarray(doc["features"], dtype=float),
                    [np.asarray(w, dtype=float) for w in doc["weights"]],
                    link, priors, bound_b,
                )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidClass):
                raise
            raise InvalidClass(f"class document: malformed array ({exc})") from None
        raise InvalidClass("class document: needs either 'members' or 'features' + 'weights'")


def check_tuple(cls: QFunctionClass, f: MemberIndexTuple) -> None:
    if len(f) != cls.horizon:
        raise IndexError(f"member tuple has {len(f)} entries, class has {cls.horizon} steps")
    for h, (i, n) in enumerate(zip(f, cls.sizes)):
        if not 0 <= i < n:
            raise IndexError(f"member index {i} out of range at step {h} (size {n})")


def iter_tuples(cls: QFunctionClass) -> Iterator[MemberIndexTuple]:
    """All member tuples in row-major order (last step varies fastest)."""
    return itertools.product(*(range(n) for n in cls.sizes))


def greedy_policy(cls: QFunctionClass, f: MemberIndexTuple) -> DeterministicPolicy:
    return DeterministicPolicy(np.argmax(cls.tuple_tables(f), axis=2))


def bellman_targets(mdp: TabularMdp, cls: QFunctionClass, h: int) -> np.ndarray:
    """T*_h f^{h+1} for every f^{h+1} in F_{h+1}; shape (n_{h+1}, X, A), n = 1 at the last step."""
    if h == cls.horizon - 1:
        return bellman_apply(mdp, h, None)[None]
    r = mdp.mean_rewards[h]
    return r[None] + np.einsum("xay,jy->jxa", mdp.transitions[h], cls.state_values[h + 1])


def residual_tables(mdp: TabularMdp, cls: QFunctionClass, h: int) -> np.ndarray:
    """E(f^h_i, f^{h+1}_j; x, a) for every pair, shape (n_h, n_{h+1}, X, A)."""
    return cls.members[h][:, None] - bellman_targets(mdp, cls, h)[None]


def tuple_residuals(mdp: TabularMdp, cls: QFunctionClass, f: MemberIndexTuple) -> np.ndarray:
    """Bellman residual tables E_h(f; x, a) of one tuple, shape (H, X, A)."""
    tables = cls.tuple_tables(f)
    out = np.empty_like(tables)
    for h in range(cls.horizon):
        nxt = tables[h + 1] if h + 1 < cls.horizon else None
        out[h] = tables[h] - bellman_apply(mdp, h, nxt)
    return out


def bellman_residual(
    mdp: TabularMdp, cls: QFunctionClass, f: MemberIndexTuple, h: int, x: int, a: int
) -> float:
    check_tuple(cls, f)
    nxt = cls.members[h + 1][f[h + 1]] if h + 1 < cls.horizon else None
    return float(cls.members[h][f[h]][x, a] - bellman_apply(mdp, h, nxt)[x, a])


@dataclass
class AssumptionReport:
    realizable: bool
    bounded: bool
    complete: bool
    witnesses: dict

    @property
    def all_hold(self) -> bool:
        return self.realizable and self.bounded and self.complete


def check_assumptions(mdp: TabularMdp, cls: QFunctionClass, tol: float) -> AssumptionReport:
    """Realizability, boundedness and completeness, each with a witness.

    Witnesses: `realizable` maps to the matching tuple or the first step where Q*
    is missing; `bounded` to b or the first offending (h, member); `complete` to
    the first (h, next-step member) whose Bellman image is not in the class.
    """
    cls.matches(mdp)
    Q, _ = optimal_values(mdp)
    witnesses: dict = {}

    realizer = []
    for h in range(cls.horizon):
        dist = np.abs(cls.members[h] - Q[h]).reshape(cls.sizes[h], -1).max(axis=1)
        hits = np.flatnonzero(dist <= tol)
        if len(hits) == 0:
            witnesses["realizable"] = {"missing_step": h, "closest_distance": float(dist.min())}
            break
        realizer.append(int(hits[0]))
    else:
        witnesses["realizable"] = {"tuple": tuple(realizer)}
    realizable = len(realizer) == cls.horizon

    b = cls.bound_b
    bounded = True
    for h, m in enumerate(cls.members):
        bad = np.flatnonzero(((m < -tol) | (m + 1 > b + tol)).reshape(len(m), -1).any(axis=1))
        if len(bad):
            bounded = False
            i = int(bad[0])
            witnesses["bounded"] = {"step": h, "member": i, "b": b,
                                    "min": float(m[i].min()), "max": float(m[i].max())}
            break
    else:
        witnesses["bounded"] = {"b": b}

    complete = True
    for h in range(cls.horizon):
        targets = bellman_targets(mdp, cls, h)
        dist = np.abs(cls.members[h][:, None] - targets[None]).reshape(
            cls.sizes[h], len(targets), -1).max(axis=2)
        covered = dist.min(axis=0) <= tol
        if not covered.all():
            complete = False
            j = int(np.flatnonzero(~covered)[0])
            witnesses["complete"] = {"step": h, "next_member": j,
                                     "closest_distance": float(dist[:, j].min())}
            break
    else:
        witnesses["complete"] = {}
    return AssumptionReport(realizable, bounded, complete, witnesses)


def cover_masses(mdp: TabularMdp, cls: QFunctionClass, epsilon: float, h: int) -> np.ndarray:
    """p0^h(F_h(eps, f^{h+1}_j)) for every j, shape (n_{h+1},)."""
    sup = np.abs(residual_tables(mdp, cls, h)).reshape(cls.sizes[h], cls.next_sizes()[h], -1).max(axis=2)
    inside = sup <= epsilon + SET_ATOL
    return cls.priors[h] @ inside


def _log_covers(mdp, cls, epsilon, h) -> np.ndarray:
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon!r}")
    mass = cover_masses(mdp, cls, epsilon, h)
    empty = np.flatnonzero(mass <= 0)
    if len(empty):
        raise EmptyCoverSet(h, int(empty[0]), epsilon)
    return np.log(mass)


def kappa_per_step(cls: QFunctionClass, epsilon: float, mdp: TabularMdp) -> np.ndarray:
    """sup_{f^{h+1}} ln 1 / p0^h(F_h(eps, f^{h+1})) for each h."""
    cls.matches(mdp)
    return np.array([-_log_covers(mdp, cls, epsilon, h).min() for h in range(cls.horizon)])


def kappa(cls: QFunctionClass, epsilon: float, mdp: TabularMdp) -> float:
    # The sup over tuples separates into one sup per step.
    return float(kappa_per_step(cls, epsilon, mdp).sum())


def kappa_alpha(cls: QFunctionClass, alpha: float, epsilon: float, mdp: TabularMdp) -> np.ndarray:
    """(1 - a) ln E_{f^{h+1} ~ p0^{h+1}} p0^h(F_h(eps, f^{h+1}))^(-a / (1 - a)) per step.

    alpha == 1 returns the limiting value, i.e. `kappa_per_step`.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha!r}")
    if alpha == 1:
        return kappa_per_step(cls, epsilon, mdp)
    cls.matches(mdp)
    out = np.empty(cls.horizon)
    for h in range(cls.horizon):
        log_cover = _log_covers(mdp, cls, epsilon, h)
        log_next_prior = cls.log_priors[h + 1] if h + 1 < cls.horizon else np.zeros(1)
        out[h] = (1 - alpha) * logsumexp(log_next_prior - alpha / (1 - alpha) * log_cover)
    return out


def boundedness_b(cls: QFunctionClass) -> float:
    """Smallest b >= 1 with every member value in [0, b - 1]."""
    for h, m in enumerate(cls.members):
        if m.min() < 0:
            i = int(np.argmin(m.reshape(len(m), -1).min(axis=1)))
            raise NegativeValue(h, i, float(m[i].min()))
    return max(1.0, 1.0 + max(float(m.max()) for m in cls.members))


def _dedupe(tables: list[np.ndarray], atol: float = 1e-12) -> list[np.ndarray]:
    kept: list[np.ndarray] = []
    for t in tables:
        if not any(np.max(np.abs(t - k)) <= atol for k in kept):
            kept.append(t)
    return kept


def closure_class(
    mdp: TabularMdp,
    candidates: Sequence[Sequence[np.ndarray]],
    bound_b: float | None = None,
) -> QFunctionClass:
    """Close per-step candidate tables under T* backward, with uniform priors.

    F_H = candidates_H + {T*_H 0}; F_h = candidates_h + {T*_h g : g in F_{h+1}}.
    Duplicate tables are dropped, so completeness holds exactly and Q* is
    contained whenever the recursion starts from the zero function.
    """
    H = mdp.horizon
    if len(candidates) != H:
        raise InvalidClass(f"candidates: expected {H} steps, got {len(candidates)}")
    layers: list[list[np.ndarray]] = [[] for _ in range(H)]
    nxt: list[np.ndarray | None] = [None]
    for h in range(H - 1, -1, -1):
        images = [bellman_apply(mdp, h, g) for g in nxt]
        layers[h] = _dedupe(images + [np.asarray(c, dtype=float) for c in candidates[h]])
        nxt = layers[h]
    return QFunctionClass.from_tables([np.stack(layer) for layer in layers], bound_b=bound_b)


def check_link_lipschitz(cls: QFunctionClass, n_pairs: int = 200, seed: int = 0) -> bool:
    """k |<phi, w - w'>| <= |sigma(<phi, w>) - sigma(<phi, w'>)| <= K |<phi, w - w'>| on sampled pairs."""
    if cls.backing is None:
        raise ValueError("class has no feature backing")
    back = cls.backing
    link = back.link
    k = 1.0 if link.k is None else link.k
    K = 1.0 if link.K is None else link.K
    rng = np.random.default_rng(seed)
    phi = back.features
    for _ in range(n_pairs):
        h = int(rng.integers(cls.horizon))
        i, j = rng.integers(len(back.weights[h]), size=2)
        zi = phi @ back.weights[h][i]
        zj = phi @ back.weights[h][j]
        dz = np.abs(zi - zj)
        ds = np.abs(link(zi) - link(zj))
        if np.any(ds < k * dz - 1e-12) or np.any(ds > K * dz + 1e-12):
            return False
    return True
