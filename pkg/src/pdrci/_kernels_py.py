"""Pure numpy implementations of the hot loops (fallback for ``_kernels``)."""
import numpy as np


def max_violation(F, g, X):
    """``max_r (F[r] @ x - g[r])`` for every row ``x`` of ``X``."""
    F = np.ascontiguousarray(F, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        return np.empty(0)
    return np.max(X @ F.T - g, axis=1)


def count_inside(F, g, X, tol):
    return int(np.count_nonzero(max_violation(F, g, X) <= tol))


def rollout_lpv(A, B, E, C, D, K, x0, xi, w):
    """Closed-loop rollouts ``x+ = (A(xi) + B(xi) K(xi)) x + E(xi) w``.

    Shapes: vertex stacks ``A (N, nx, nx)``, ``B (N, nx, nu)``, ``E (N, nx, nw)``,
    ``C (N, nz, nx)``, ``D (N, nz, nu)``, ``K (N, nu, nx)``; ``x0 (R, nx)``,
    ``xi (R, T, N)``, ``w (R, T, nw)``. Returns ``(X (R, T+1, nx), cost (R, T+1))``
    where ``cost[:, t]`` is the accumulated ``sum ||z||^2`` before step t.
    """
    A, B, E, C, D, K = (np.asarray(m, dtype=np.float64) for m in (A, B, E, C, D, K))
    x0 = np.asarray(x0, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    R, T = xi.shape[0], xi.shape[1]
    nx = A.shape[1]
    X = np.empty((R, T + 1, nx))
    cost = np.zeros((R, T + 1))
    X[:, 0] = x0
    x = x0.copy()
    for t in range(T):
        s = xi[:, t]
        At = np.einsum("rk,kij->rij", s, A)
        Bt = np.einsum("rk,kij->rij", s, B)
        Et = np.einsum("rk,kij->rij", s, E)
        Ct = np.einsum("rk,kij->rij", s, C)
        Dt = np.einsum("rk,kij->rij", s, D)
        Kt = np.einsum("rk,kij->rij", s, K)
        u = np.einsum("rij,rj->ri", Kt, x)
        z = np.einsum("rij,rj->ri", Ct, x) + np.einsum("rij,rj->ri", Dt, u)
        cost[:, t + 1] = cost[:, t] + np.sum(z * z, axis=1)
        x = (np.einsum("rij,rj->ri", At, x) + np.einsum("rij,rj->ri", Bt, u)
             + np.einsum("rij,rj->ri", Et, w[:, t]))
        X[:, t + 1] = x
    return X, cost
