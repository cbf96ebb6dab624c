"""Independent reference implementations used only by the tests.

Each oracle is written from the definition with plain loops or a generic
solver, sharing no code with the package beyond numpy/scipy.
"""

import itertools

import numpy as np
import scipy.optimize


def contexts_by_definition(X, y, tau, k=1, series=None):
    """Z_t = [e_{t-k-tau+1} | ... | e_{t-k}], e_s = X_s - y_s, zero outside the series."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    Z = np.zeros((n, m * tau))
    for t in range(n):
        for j in range(tau):
            s = t - k - tau + 1 + j
            if s < 0:
                continue
            if series is not None and any(series[u] != series[t] for u in range(s, t + 1)):
                continue
            Z[t, j * m:(j + 1) * m] = X[s] - y[s]
    return Z


def rule_predictions(X, Z, beta0, V0):
    return np.array([X[t] @ (beta0 + V0 @ Z[t]) for t in range(X.shape[0])])


def dense_design(X, Z):
    """A with row t = [X_t | kron(X_t, Z_t)] for theta = [beta0 | vec_row(V0)]."""
    return np.array([np.concatenate([X[t], np.kron(X[t], Z[t])]) for t in range(X.shape[0])])


def dense_regularizer(X, Z):
    m = X.shape[1]
    blocks = [np.hstack([np.eye(m), np.kron(np.eye(m), Z[t][None, :])]) for t in range(X.shape[0])]
    return np.vstack(blocks)


def norm_sum_objective(A, F, y, lam, theta):
    return np.linalg.norm(y - A @ theta) + lam * np.linalg.norm(F @ theta)


def minimize_norm_sum(A, F, y, lam, x0):
    """Generic quasi-Newton minimization of the norm-sum objective."""
    f = lambda th: norm_sum_objective(A, F, y, lam, th)

    def grad(th):
        r = y - A @ th
        b = F @ th
        return -A.T @ r / max(np.linalg.norm(r), 1e-300) + lam * F.T @ b / max(np.linalg.norm(b), 1e-300)

    res = scipy.optimize.minimize(f, x0, jac=grad, method="BFGS",
                                  options={"gtol": 1e-12, "maxiter": 20000})
    return res.x, res.fun


def ridge_by_lstsq(X, y, lam):
    """Ridge through the augmented least-squares system [X; sqrt(lam) I]."""
    m = X.shape[1]
    A = np.vstack([X, np.sqrt(lam) * np.eye(m)])
    b = np.concatenate([y, np.zeros(m)])
    return np.linalg.lstsq(A, b, rcond=None)[0]


def cvar_by_grid(errors, alpha, n_grid=20001):
    """Dense grid minimization of tau + sum(max(0, |e| - tau)) / (alpha T)."""
    e = np.abs(np.asarray(errors, dtype=float))
    taus = np.linspace(0.0, e.max(), n_grid)
    vals = taus + np.maximum(0.0, e[None, :] - taus[:, None]).sum(axis=1) / (alpha * e.size)
    return vals.min()


def spectral_norm_power(D, iters=5000, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(D.shape[1])
    for _ in range(iters):
        v = D.T @ (D @ v)
        v /= np.linalg.norm(v)
    return np.linalg.norm(D @ v)


def induced_norm_by_vertices(D, h, g):
    """max g(D b) over h(b) <= 1 by enumerating l1 or linf ball vertices.

    Only valid for h in {1, inf}, where the ball is a polytope and the convex
    function g(D b) attains its maximum at a vertex.
    """
    n = D.shape[1]
    if h == 1:
        verts = np.vstack([np.eye(n), -np.eye(n)])
    elif h == np.inf:
        verts = np.array(list(itertools.product((1.0, -1.0), repeat=n)))
    else:
        raise ValueError("vertex enumeration needs h in {1, inf}")
    return max(np.linalg.norm(D @ b, ord=g) for b in verts)


def exp3_by_hand(regrets, window, m):
    eta = np.sqrt(8 * np.log(m) / window)
    w = np.array([np.exp(-eta * r) for r in regrets])
    return w / w.sum()


def pa_by_hand(beta, x, y, eps):
    beta = np.array(beta, dtype=float)
    x = np.array(x, dtype=float)
    res = y - x @ beta
    tau = max(0.0, abs(res) - eps) / (x @ x)
    return beta + np.sign(res) * tau * x


def cvar_by_lp(errors, alpha):
    """Rockafellar-Uryasev linear program solved by HiGHS.

    min tau + sum(u) / (alpha T)  s.t.  u_i >= |e_i| - tau, u >= 0.  The
    objective is re-evaluated at the returned tau.
    """
    e = np.abs(np.asarray(errors, dtype=float))
    n = e.size
    c = np.r_[1.0, np.full(n, 1.0 / (alpha * n))]
    A = np.hstack([-np.ones((n, 1)), -np.eye(n)])
    res = scipy.optimize.linprog(c, A_ub=A, b_ub=-e, bounds=[(None, None)] + [(0, None)] * n,
                                 method="highs")
    tau = res.x[0]
    return tau + np.maximum(0.0, e - tau).sum() / (alpha * n)
