"""Small dense convex QP solver: minimize ||u - u_nom||^2 subject to linear
inequality rows a^T u >= b and box bounds.

The Hessian is the identity, so the problem is a Euclidean projection onto a
polyhedron. Problems here are tiny (m = 2, a few dozen rows), which makes a
dual active-set iteration both fast and exact: start from the unconstrained
minimizer u_nom and add violated constraints one at a time, taking partial
dual steps (dropping blocking constraints) when needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import InputBounds

__all__ = ["QpProblem", "QpSolution", "solve_qp"]


@dataclass(frozen=True)
class QpProblem:
    """Projection QP data: target point, inequality rows, box bounds."""

    u_nom: np.ndarray
    constraints: list
    bounds: InputBounds

    def __post_init__(self):
        object.__setattr__(self, "u_nom", np.asarray(self.u_nom, dtype=float))
        rows = [(np.asarray(a, dtype=float), float(b)) for a, b in self.constraints]
        object.__setattr__(self, "constraints", rows)
        m = self.u_nom.shape[0]
        for a, b in rows:
            if a.shape != (m,) or not np.all(np.isfinite(a)) or not np.isfinite(b):
                raise ValueError("constraint rows must be finite vectors of length m")


@dataclass(frozen=True)
class QpSolution:
    u_star: np.ndarray
    status: str  # 'optimal' | 'infeasible' | 'max_iter'
    kkt_residual: float
    iterations: int = 0
    multipliers: dict = field(default_factory=dict)


def _assemble_rows(problem: QpProblem):
    """Stack inequality rows with the box rewritten as 2m rows; deduplicate
    exact repeats."""
    m = problem.u_nom.shape[0]
    rows = []
    for a, b in problem.constraints:
        rows.append((a, b))
    eye = np.eye(m)
    for i in range(m):
        rows.append((eye[i], float(problem.bounds.lower[i])))
        rows.append((-eye[i], float(-problem.bounds.upper[i])))
    seen = set()
    a_list, b_list = [], []
    for a, b in rows:
        key = (a.tobytes(), b)
        if key in seen:
            continue
        seen.add(key)
        a_list.append(a)
        b_list.append(b)
    return np.array(a_list), np.array(b_list)


def _kkt_residual(x, u_nom, amat, bvec, active, lam):
    grad = x - u_nom
    for idx, l in zip(active, lam):
        grad = grad - l * amat[idx]
    stationarity = float(np.max(np.abs(grad))) if grad.size else 0.0
    slack = amat @ x - bvec if len(bvec) else np.zeros(0)
    feasibility = float(max(0.0, -np.min(slack))) if slack.size else 0.0
    comp = 0.0
    for idx, l in zip(active, lam):
        comp = max(comp, abs(l * float(slack[idx])))
    return max(stationarity, feasibility, comp)


def solve_qp(problem: QpProblem, tol: float = 1e-8, max_iter: int = 200) -> QpSolution:
    """Solve the projection QP by a dual active-set iteration.

    Returns status 'optimal' with primal feasibility and stationarity within
    ``tol``, 'infeasible' when no admissible point exists, or 'max_iter' with
    the best iterate found. When u_nom itself is feasible it is returned
    bit-for-bit unchanged. Deterministic for identical inputs.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    amat, bvec = _assemble_rows(problem)
    x = problem.u_nom.copy()
    n_rows = amat.shape[0]
    if n_rows == 0:
        return QpSolution(x, "optimal", 0.0, 0)

    active: list[int] = []
    lam: list[float] = []
    iterations = 0

    while iterations < max_iter:
        iterations += 1
        slack = amat @ x - bvec
        p = int(np.argmin(slack))
        if slack[p] >= -tol:
            resid = _kkt_residual(x, problem.u_nom, amat, bvec, active, lam)
            mults = {idx: l for idx, l in zip(active, lam)}
            return QpSolution(x, "optimal", resid, iterations, mults)

        n_p = amat[p]
        lam_p = 0.0
        while True:
            if active:
                nmat = amat[active].T  # (m, q)
                gram = nmat.T @ nmat
                r, *_ = np.linalg.lstsq(gram, nmat.T @ n_p, rcond=None)
                z = n_p - nmat @ r
            else:
                r = np.zeros(0)
                z = n_p.copy()

            z_norm2 = float(z @ z)
            curvature_ok = z_norm2 > 1e-14 * max(1.0, float(n_p @ n_p))

            t1 = np.inf
            drop_j = -1
            for j, (l, rj) in enumerate(zip(lam, r)):
                if rj > 1e-12:
                    step = l / rj
                    if step < t1:
                        t1 = step
                        drop_j = j
            t2 = (bvec[p] - n_p @ x) / z_norm2 if curvature_ok else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                resid = _kkt_residual(x, problem.u_nom, amat, bvec, active, lam)
                return QpSolution(x, "infeasible", resid, iterations)

            if curvature_ok:
                x = x + t * z
            lam = [l - t * rj for l, rj in zip(lam, r)]
            lam_p += t

            if t == t2 and curvature_ok:
                active.append(p)
                lam.append(lam_p)
                break
            # dual step: drop the blocking constraint and retry
            active.pop(drop_j)
            lam.pop(drop_j)

    resid = _kkt_residual(x, problem.u_nom, amat, bvec, active, lam)
    return QpSolution(x, "max_iter", resid, iterations)
