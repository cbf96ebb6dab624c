"""Numerical checks for the min-max / regularization equivalence.

For an uncertainty set ``U`` of perturbations ``Delta`` with radius ``lam``,

    max_{Delta in U} g(y - (X + Delta) beta) = g(y - X beta) + lam * h(beta)

where ``g`` is the residual norm and ``h`` the regularizer norm.  Two set
families are supported:

* induced: ``{Delta : ||Delta||_(h,g) <= lam}`` with
  ``||Delta||_(h,g) = max_{h(b) = 1} g(Delta b)``;
* Frobenius-p: ``{Delta : ||vec(Delta)||_p <= lam}``, for which the identity
  holds with ``g = l_p`` and ``h = l_{p*}``, ``1/p + 1/p* = 1``.

The maximizer is built explicitly as a rank-one matrix and the claim is
checked by sampling feasible perturbations on the set boundary.  Nothing
here solves the inner maximization numerically.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from .exceptions import VerificationError

_NAMES = {"l1": 1.0, "1": 1.0, "l2": 2.0, "2": 2.0, "linf": np.inf, "inf": np.inf, "l_inf": np.inf}
_ENUM_LIMIT = 16  # largest dimension for exact vertex enumeration


def as_order(p):
    """Normalize a norm label (``"l1"``, ``2``, ``"linf"``, ...) to 1, 2 or inf."""
    if isinstance(p, str):
        key = p.strip().lower()
        if key not in _NAMES:
            raise ValueError(f"unsupported norm {p!r}; use l1, l2 or linf")
        return _NAMES[key]
    p = float(p)
    if p not in (1.0, 2.0, np.inf):
        raise ValueError(f"unsupported norm order {p}; use 1, 2 or inf")
    return p


def dual_order(p):
    p = as_order(p)
    return {1.0: np.inf, 2.0: 2.0, np.inf: 1.0}[p]


def order_label(p):
    return {1.0: "l1", 2.0: "l2", np.inf: "linf"}[as_order(p)]


def vector_norm(x, p, axis=-1):
    return np.linalg.norm(np.asarray(x, dtype=float), ord=as_order(p), axis=axis)


def dual_maximizer(beta, h):
    """``v`` with ``h*(v) = 1`` and ``beta @ v = h(beta)``.

    h = l2 gives ``beta / ||beta||``; h = l1 gives ``sign(beta)``; h = linf
    gives a signed unit vector on the largest ``|beta_j|`` (lowest index on
    ties).  Returns the zero vector for ``beta = 0``.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    h = as_order(h)
    if not np.any(beta):
        return np.zeros_like(beta)
    if h == 2.0:
        return beta / np.linalg.norm(beta)
    if h == 1.0:
        return np.sign(beta)
    j = int(np.argmax(np.abs(beta)))
    v = np.zeros_like(beta)
    v[j] = np.sign(beta[j])
    return v


def _unit_vector(n, p):
    """Any vector of ``l_p`` norm one (the first basis vector)."""
    u = np.zeros(n)
    u[0] = 1.0
    return u


def _sign_vertices(n):
    return np.array(list(itertools.product((1.0, -1.0), repeat=n)))


@dataclass(frozen=True)
class NormEstimate:
    """An induced norm value; ``exact=False`` marks a sampled lower bound."""

    value: float
    exact: bool


def _induced_batch(D, h, g, *, n_probe=0, rng=None):
    """Induced norms of a stack ``D`` of shape (N, rows, cols).

    Returns ``(values, exact)``.  Every pair is exact while the enumerated
    dimension stays within ``_ENUM_LIMIT``:

    * h = l1: extreme points of the l1 ball are ``+-e_j``, so the norm is the
      largest column g-norm;
    * g = linf: the largest row h*-norm;
    * h = g = l2: spectral norm;
    * g = l1: ``max over s in {+-1}^rows of h*(D^T s)`` (rows enumerated);
    * h = linf: ``max over b in {+-1}^cols of g(D b)`` (columns enumerated).
    """
    h, g = as_order(h), as_order(g)
    D = np.asarray(D, dtype=float)
    if D.ndim == 2:
        D = D[None]
    n_rows, n_cols = D.shape[1:]
    if h == 1.0:
        return np.linalg.norm(D, ord=g, axis=1).max(axis=1), True
    if g == np.inf:
        return np.linalg.norm(D, ord=dual_order(h), axis=2).max(axis=1), True
    if h == 2.0 and g == 2.0:
        return np.linalg.svd(D, compute_uv=False)[:, 0], True
    if g == 1.0 and n_rows <= _ENUM_LIMIT:
        S = _sign_vertices(n_rows)
        proj = np.einsum("kr,nrc->nkc", S, D)
        return np.linalg.norm(proj, ord=dual_order(h), axis=2).max(axis=1), True
    if h == np.inf and n_cols <= _ENUM_LIMIT:
        B = _sign_vertices(n_cols)
        out = np.empty(D.shape[0])
        for i, Di in enumerate(D):
            out[i] = np.linalg.norm(B @ Di.T, ord=g, axis=1).max()
        return out, True
    # too large to enumerate: best value over random points of the h-sphere
    rng = np.random.default_rng(0) if rng is None else rng
    probes = rng.standard_normal((max(n_probe, 1), n_cols))
    probes /= np.linalg.norm(probes, ord=h, axis=1, keepdims=True)
    vals = np.linalg.norm(np.einsum("nrc,kc->nkr", D, probes), ord=g, axis=2)
    return vals.max(axis=1), False


def induced_norm(D, h, g, *, require_exact=False, n_probe=2000, seed=0):
    """``max_{h(b) = 1} g(D b)`` for a single matrix.

    Returns a :class:`NormEstimate`.  When no exact route applies the value is
    a lower bound from ``n_probe`` random directions, flagged
    ``exact=False``; ``require_exact=True`` turns that case into an error.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    vals, exact = _induced_batch(D, h, g, n_probe=n_probe, rng=np.random.default_rng(seed))
    if require_exact and not exact:
        raise ValueError(
            f"no exact induced norm for (h={order_label(h)}, g={order_label(g)}) at shape {D.shape}"
        )
    return NormEstimate(float(vals[0]), exact)


def frobenius_norm(D, p=2):
    """Entrywise ``l_p`` norm of ``vec(D)``."""
    return float(np.linalg.norm(np.asarray(D, dtype=float).ravel(), ord=as_order(p)))


@dataclass(frozen=True)
class UncertaintySet:
    """Ball of perturbations around the design.

    Build with :meth:`induced` or :meth:`frobenius`; ``residual_order`` and
    ``regularizer_order`` give the norms ``g`` and ``h`` of the matching
    regularized problem.
    """

    kind: str
    radius: float
    h: float = 2.0
    g: float = 2.0
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in ("induced", "frobenius"):
            raise ValueError(f"kind must be 'induced' or 'frobenius', got {self.kind!r}")
        if not np.isfinite(self.radius) or self.radius < 0:
            raise ValueError(f"radius must be finite and >= 0, got {self.radius}")
        for name in ("h", "g", "p"):
            object.__setattr__(self, name, as_order(getattr(self, name)))

    @classmethod
    def induced(cls, h, g, radius):
        return cls("induced", float(radius), h=h, g=g)

    @classmethod
    def frobenius(cls, p, radius):
        return cls("frobenius", float(radius), p=p)

    @property
    def residual_order(self):
        return self.g if self.kind == "induced" else self.p

    @property
    def regularizer_order(self):
        return self.h if self.kind == "induced" else dual_order(self.p)

    def describe(self):
        if self.kind == "induced":
            return f"induced(h={order_label(self.h)},g={order_label(self.g)})"
        return f"frobenius(p={order_label(self.p)})"

    def norms(self, D):
        """Exact set norms of a stack of matrices; raises if none is available."""
        D = np.asarray(D, dtype=float)
        if D.ndim == 2:
            D = D[None]
        if self.kind == "frobenius":
            return np.linalg.norm(D.reshape(D.shape[0], -1), ord=self.p, axis=1)
        vals, exact = _induced_batch(D, self.h, self.g)
        if not exact:
            raise VerificationError(f"{self.describe()} norm is not exactly computable at shape {D.shape[1:]}")
        return vals

    def norm(self, D):
        return float(self.norms(D)[0])

    def contains(self, D, tol=1e-9):
        return self.norm(D) <= self.radius * (1.0 + tol) + tol

    def bound(self, z, beta):
        """``g(z) + radius * h(beta)``."""
        return float(vector_norm(z, self.residual_order) + self.radius * vector_norm(beta, self.regularizer_order))

    def sample_boundary(self, shape, n, rng, anchor=None):
        """``n`` random matrices rescaled to lie exactly on the set boundary.

        Draws mix dense Gaussian, sparse, and rank-one matrices; if ``anchor``
        is given, a quarter are small perturbations of it to probe the region
        around the analytic maximizer.
        """
        n_rows, n_cols = shape
        kinds = rng.integers(0, 4 if anchor is not None else 3, size=n)
        D = rng.standard_normal((n, n_rows, n_cols))
        sparse = kinds == 1
        D[sparse] *= rng.random((int(sparse.sum()), n_rows, n_cols)) < 0.2
        rank1 = np.flatnonzero(kinds == 2)
        if rank1.size:
            u = rng.standard_normal((rank1.size, n_rows))
            v = rng.standard_normal((rank1.size, n_cols))
            D[rank1] = u[:, :, None] * v[:, None, :]
        near = np.flatnonzero(kinds == 3)
        if near.size:
            scale = rng.uniform(1e-6, 1e-1, size=(near.size, 1, 1))
            D[near] = anchor[None] + scale * np.abs(anchor).max() * D[near]
        norms = self.norms(D)
        keep = norms > 0
        D = D[keep] * (self.radius / norms[keep])[:, None, None]
        return D


@dataclass
class WorstCasePerturbation:
    """Rank-one maximizer ``delta = scale * u v^T`` and its certificate."""

    delta: np.ndarray
    achieved: float
    bound: float
    u: np.ndarray
    v: np.ndarray
    scale: float
    branch: str

    @property
    def gap(self):
        return self.achieved - self.bound


def worst_case_delta(z, beta, h, g, lam):
    """Maximizer of ``g(z + Delta beta)`` over ``||Delta||_(h,g) <= lam``.

    For ``g(z) != 0``: ``Delta = (lam / g(z)) z v^T``; for ``g(z) = 0``:
    ``Delta = lam u v^T`` with ``g(u) = 1``.  Here ``v`` is the dual
    maximizer of ``beta`` for ``h``.  ``beta = 0`` or ``lam = 0`` give
    ``Delta = 0``.  The same construction is the maximizer over the
    Frobenius-p ball when ``g = l_p`` and ``h = l_{p*}``.
    """
    z = np.asarray(z, dtype=float).ravel()
    beta = np.asarray(beta, dtype=float).ravel()
    h, g = as_order(h), as_order(g)
    lam = float(lam)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    gz = float(np.linalg.norm(z, ord=g))
    bound = gz + lam * float(np.linalg.norm(beta, ord=h))
    v = dual_maximizer(beta, h)
    if gz > 0:
        u, branch = z / gz, "residual"
    else:
        u, branch = _unit_vector(z.size, g), "zero-residual"
    if lam == 0 or not np.any(beta):
        delta = np.zeros((z.size, beta.size))
        branch = "trivial"
    else:
        delta = lam * np.outer(u, v)
    achieved = float(np.linalg.norm(z + delta @ beta, ord=g))
    return WorstCasePerturbation(delta, achieved, bound, u, v, lam, branch)


def stack_design(X):
    """Block-diagonal ``T x (T m)`` design whose row ``t`` holds ``X_t`` in block ``t``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T, m = X.shape
    Xt = np.zeros((T, T * m))
    for t in range(T):
        Xt[t, t * m:(t + 1) * m] = X[t]
    return Xt


@dataclass
class EquivalenceReport:
    uncertainty: str
    radius: float
    bound: float
    constructive: float
    constructive_norm: float
    max_sampled: float
    n_samples: int
    n_violations: int
    tol: float
    violating_delta: np.ndarray = field(default=None, repr=False)

    @property
    def constructive_ok(self):
        scale = max(1.0, abs(self.bound))
        return (abs(self.constructive - self.bound) <= self.tol * scale
                and self.constructive_norm <= self.radius * (1 + self.tol) + self.tol)

    @property
    def passed(self):
        return self.constructive_ok and self.n_violations == 0

    def to_dict(self):
        return {
            "uncertainty": self.uncertainty,
            "radius": self.radius,
            "bound": self.bound,
            "constructive": self.constructive,
            "constructive_norm": self.constructive_norm,
            "max_sampled": self.max_sampled,
            "n_samples": self.n_samples,
            "n_violations": self.n_violations,
            "passed": bool(self.passed),
            "violating_delta": None if self.violating_delta is None else self.violating_delta.tolist(),
        }


def verify_equivalence(X, y, beta, uset, *, n_samples=10_000, seed=0, tol=1e-9, batch=2000):
    """Check the min-max identity for one coefficient vector.

    ``X`` is a small ``T x m`` panel and ``beta`` either ``m`` static weights
    (repeated over time) or the stacked ``T m`` vector.  The residual is
    ``y - (X_stacked + Delta) beta``; its worst case is compared with
    ``g(y - X_stacked beta) + radius * h(beta)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    T, m = X.shape
    if y.size != T:
        raise ValueError(f"y has {y.size} entries for {T} rows")
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.size == m:
        beta = np.tile(beta, T)
    if beta.size != T * m:
        raise ValueError(f"beta must have {m} or {T * m} entries, got {beta.size}")
    Xt = stack_design(X)
    z = y - Xt @ beta
    g, h = uset.residual_order, uset.regularizer_order
    wc = worst_case_delta(z, beta, h, g, uset.radius)
    # y - (Xt + Delta) beta = z - Delta beta, so the maximizer enters with a minus sign
    delta = -wc.delta
    constructive = float(np.linalg.norm(z - delta @ beta, ord=g))
    constructive_norm = uset.norm(delta)
    bound = uset.bound(z, beta)
    rng = np.random.default_rng(seed)
    max_sampled = -np.inf
    n_viol = 0
    worst = None
    drawn = 0
    anchor = delta if np.any(delta) else None
    limit = bound + tol * max(1.0, abs(bound))
    while drawn < n_samples:
        k = min(batch, n_samples - drawn)
        D = uset.sample_boundary((T, T * m), k, rng, anchor=anchor)
        vals = np.linalg.norm(z[None, :] - D @ beta, ord=g, axis=1)
        bad = vals > limit
        n_viol += int(bad.sum())
        if bad.any() and worst is None:
            worst = D[int(np.argmax(vals))]
        max_sampled = max(max_sampled, float(vals.max()) if vals.size else -np.inf)
        drawn += k
    return EquivalenceReport(
        uncertainty=uset.describe(),
        radius=uset.radius,
        bound=bound,
        constructive=constructive,
        constructive_norm=constructive_norm,
        max_sampled=max_sampled,
        n_samples=n_samples,
        n_violations=n_viol,
        tol=tol,
        violating_delta=worst,
    )


def random_instance(rng, T=None, m=None):
    """Desk-scale random instance ``(X, y, beta, lam)`` with ``T <= 6``, ``m <= 3``."""
    T = int(rng.integers(1, 7)) if T is None else T
    m = int(rng.integers(1, 4)) if m is None else m
    X = rng.standard_normal((T, m))
    y = rng.standard_normal(T)
    beta = rng.standard_normal(T * m) * rng.uniform(0.1, 2.0)
    lam = float(rng.uniform(0.01, 2.0))
    return X, y, beta, lam
