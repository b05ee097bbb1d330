"""Numerical kernels: truncated pseudoinverse, null-space projectors,
hyperspherical unit vectors, pairwise distances, K-means, Gaussian RBF
features and a damped least-squares (Levenberg-Marquardt) solver.

Everything here is a pure function of its inputs and safe to call
concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import LearnOptions, LearnReport

LAMBDA_MAX = 1e12


def pinv_truncated(m, threshold=1e-8):
    """Moore-Penrose pseudoinverse with relative singular-value truncation.

    Singular values below threshold * sigma_max are treated as exactly
    zero, which keeps the inversion stable near rank-deficient
    configurations.  A zero matrix maps to a zero pseudoinverse.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if not np.isfinite(m).all():
        raise ValueError("matrix must be finite")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0:
        return np.zeros((m.shape[1], m.shape[0]))
    # exactly-zero singular values are always truncated, whatever the
    # threshold; without the zeroed `out` the masked divide leaves garbage
    inv = np.divide(1.0, s, out=np.zeros_like(s), where=s > 0)
    inv[s < threshold * s[0]] = 0.0
    return (vt.T * inv) @ u.T


@dataclass(frozen=True)
class ProjectionPair:
    """A constraint matrix together with its null-space projector
    N = I - pinv(A) A (symmetric, idempotent)."""

    a_matrix: np.ndarray
    projector: np.ndarray


def nullspace_projector(a, threshold=1e-8) -> ProjectionPair:
    """Projector onto the null space of the row space of ``a``.

    Accepts any rank, including zero rows (which yield the identity).
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    dim_b, dim_u = a.shape
    if dim_b > dim_u:
        raise ValueError("constraint must have at most dim_u rows")
    n = np.eye(dim_u) - pinv_truncated(a, threshold) @ a
    return ProjectionPair(a_matrix=a, projector=n)


def unit_vector_from_angles(theta):
    """Unit vector of dimension len(theta) + 1 from hyperspherical angles:
    a_i = cos(theta_i) * prod_{j<i} sin(theta_j), with the last component
    prod_j sin(theta_j)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.size < 1:
        raise ValueError("need at least one angle (output dimension >= 2)")
    return unit_vectors_from_angles(theta[:, None])[:, 0]


def unit_vectors_from_angles(thetas):
    """Batch form: angles (m, N) -> unit vectors (m + 1, N)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    m, n = thetas.shape
    s, c = np.sin(thetas), np.cos(thetas)
    out = np.empty((m + 1, n))
    running = np.ones(n)
    for i in range(m):
        out[i] = c[i] * running
        running = running * s[i]
    out[m] = running
    return out


def unit_vector_angle_jacobian(theta):
    """d a / d theta for the hyperspherical construction, shape (dim, m)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return unit_vector_angle_jacobians(theta[:, None])[:, :, 0]


def unit_vector_angle_jacobians(thetas):
    """Batch Jacobians, shape (m + 1, m, N) for angles (m, N)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    m, n = thetas.shape
    s, c = np.sin(thetas), np.cos(thetas)
    # pre[k] = prod_{j<k} sin(theta_j)
    pre = np.ones((m + 1, n))
    for k in range(m):
        pre[k + 1] = pre[k] * s[k]
    jac = np.zeros((m + 1, m, n))
    for i in range(m):
        # prod_{j<k, j != i} sin(theta_j), computed with the i-th factor
        # replaced by one
        pre_i = np.ones((m + 1, n))
        for k in range(m):
            fac = np.ones(n) if k == i else s[k]
            pre_i[k + 1] = pre_i[k] * fac
        jac[i, i] = -s[i] * pre[i]
        for k in range(i + 1, m):
            jac[k, i] = c[k] * c[i] * pre_i[k]
        jac[m, i] = c[i] * pre_i[m]
    return jac


def orthogonal_complement_rotation(rows):
    """Rows completing the given orthonormal rows to a full orthonormal
    basis of R^dim, shape (dim - k, dim).

    Raises if the input rows are not orthonormal.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    k, dim = rows.shape
    if k > dim:
        raise ValueError("more rows than the space dimension")
    gram = rows @ rows.T
    if np.max(np.abs(gram - np.eye(k))) > 1e-9:
        raise ValueError("rows are not orthonormal")
    _, _, vt = np.linalg.svd(rows, full_matrices=True)
    return vt[k:]


def pairwise_sq_distances(aset, bset):
    """Squared Euclidean distances between columns: entry (i, j) is
    ||a_i - b_j||^2 for aset (d, m), bset (d, n)."""
    aset = np.atleast_2d(np.asarray(aset, dtype=float))
    bset = np.atleast_2d(np.asarray(bset, dtype=float))
    if aset.shape[0] != bset.shape[0]:
        raise ValueError("point sets must share their dimension")
    sq = (aset ** 2).sum(axis=0)[:, None] + (bset ** 2).sum(axis=0)[None, :]
    sq -= 2.0 * aset.T @ bset
    return np.maximum(sq, 0.0)


def kmeans_centers(x, n_centers, seed=0, max_iter=100):
    """Lloyd's K-means on the columns of x (dim, N) -> centers (dim, G).

    Seeding is greedy farthest-point from a seeded RNG, so results are
    reproducible.  An emptied cluster is re-seeded at the sample farthest
    from its nearest center.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dim, n = x.shape
    if n_centers > n:
        raise ValueError("cannot place more centers than samples")
    rng = np.random.default_rng(seed)

    chosen = [int(rng.integers(n))]
    d2 = pairwise_sq_distances(x, x[:, chosen])[:, 0]
    while len(chosen) < n_centers:
        d2[chosen] = -1.0  # never re-pick a selected sample
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, pairwise_sq_distances(x, x[:, [nxt]])[:, 0])
    centers = x[:, chosen].copy()

    assign = None
    for _ in range(max_iter):
        d2 = pairwise_sq_distances(x, centers)
        new_assign = np.argmin(d2, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for g in range(n_centers):
            members = assign == g
            if members.any():
                centers[:, g] = x[:, members].mean(axis=1)
            else:
                nearest = d2.min(axis=1)
                centers[:, g] = x[:, int(np.argmax(nearest))]
    return centers


def rbf_features(x, centers, width):
    """Gaussian features exp(-||x - mu_g||^2 / (2 width)) of one state."""
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    return rbf_design(x, centers, width)[:, 0]


def rbf_design(xs, centers, width):
    """Feature matrix (G, N) for states xs (dim, N)."""
    if not width > 0:
        raise ValueError("width must be > 0")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    return np.exp(-pairwise_sq_distances(centers, xs) / (2.0 * width))


def rbf_width_from_centers(centers, fallback=1.0):
    """Shared squared length-scale: (mean pairwise center distance)^2.

    The mean runs over the full distance matrix including its zero
    diagonal.  Degenerate layouts (single center, coincident centers)
    fall back to ``fallback``.
    """
    d = np.sqrt(pairwise_sq_distances(centers, centers))
    width = float(d.mean()) ** 2
    return width if width > 0 else fallback


def ridge_regression(design, targets, regularization=1e-8):
    """Weights W minimizing ||targets - W design||^2 + reg ||W||^2 for a
    design matrix (F, N) and targets (d, N); returns (d, F)."""
    b = np.atleast_2d(np.asarray(design, dtype=float))
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    gram = b @ b.T + regularization * np.eye(b.shape[0])
    return np.linalg.solve(gram, b @ t.T).T


# ---------------------------------------------------------------------------
# damped least squares
# ---------------------------------------------------------------------------

@dataclass
class LmProblem:
    """A nonlinear least-squares problem: residual r(p), optional analytic
    Jacobian J(p) (falls back to central finite differences), initial
    parameters and options."""

    residual: Callable[[np.ndarray], np.ndarray]
    p0: np.ndarray
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    options: LearnOptions = field(default_factory=LearnOptions)


def finite_difference_jacobian(fn, p, rel_step=1e-6):
    """Central-difference Jacobian with per-parameter step
    rel_step * (1 + |p_i|)."""
    p = np.asarray(p, dtype=float)
    r0 = np.atleast_1d(fn(p))
    jac = np.empty((r0.size, p.size))
    for i in range(p.size):
        h = rel_step * (1.0 + abs(p[i]))
        fwd, bwd = p.copy(), p.copy()
        fwd[i] += h
        bwd[i] -= h
        jac[:, i] = (np.atleast_1d(fn(fwd)) - np.atleast_1d(fn(bwd))) / (2.0 * h)
    return jac


def check_jacobian(fn, jac_fn, p, rel_step=1e-6):
    """Largest deviation of an analytic Jacobian from central differences,
    relative to max(1, largest analytic entry)."""
    analytic = np.atleast_2d(jac_fn(np.asarray(p, dtype=float)))
    numeric = finite_difference_jacobian(fn, p, rel_step)
    scale = max(1.0, float(np.max(np.abs(analytic))))
    return float(np.max(np.abs(analytic - numeric.reshape(analytic.shape)))) / scale


def lm_solve(problem: LmProblem):
    """Minimize ||r(p)||^2 by Levenberg-Marquardt damping of the normal
    equations: (J'J + lam diag(J'J)) step = -J'r.

    lam shrinks x0.1 after an accepted step and grows x10 after a
    rejection; the objective never increases across accepted steps.
    Terminates when the accepted step norm drops below tol_x, the
    objective improvement drops below tol_fun, on max_iter, or when lam
    overflows 1e12 (reported as not converged, best point returned).

    Returns (p_best, LearnReport).
    """
    opts = problem.options
    p = np.asarray(problem.p0, dtype=float).ravel().copy()
    r = np.atleast_1d(np.asarray(problem.residual(p), dtype=float)).ravel()
    if r.size == 0:
        raise ValueError("residual is empty")
    if not np.isfinite(r).all():
        raise ValueError("residual is not finite at the initial point")

    if problem.jacobian is None:
        jac = lambda q: finite_difference_jacobian(problem.residual, q)
    else:
        jac = lambda q: np.atleast_2d(np.asarray(problem.jacobian(q), dtype=float))

    j = jac(p)
    if j.shape != (r.size, p.size):
        raise ValueError(f"jacobian shape {j.shape} inconsistent with "
                         f"({r.size}, {p.size})")

    energy = float(r @ r)
    lam = 1e-3
    converged = False
    reason = "max-iter"
    notes = []
    iterations = 0

    for iterations in range(1, opts.max_iter + 1):
        h = j.T @ j
        g = j.T @ r
        damp = np.diag(np.maximum(np.diag(h), 1e-14))
        try:
            step = np.linalg.solve(h + lam * damp, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h + lam * damp, -g, rcond=None)[0]
        p_new = p + step
        r_new = np.atleast_1d(np.asarray(problem.residual(p_new), dtype=float)).ravel()
        e_new = float(r_new @ r_new) if np.isfinite(r_new).all() else np.inf

        if e_new <= energy:
            gain = energy - e_new
            p, r, energy = p_new, r_new, e_new
            lam = max(lam * 0.1, 1e-15)
            j = jac(p)
            if np.linalg.norm(step) < opts.tol_x:
                converged, reason = True, "x-tol"
                break
            if gain < opts.tol_fun:
                converged, reason = True, "fun-tol"
                break
        else:
            lam *= 10.0
            if lam > LAMBDA_MAX:
                notes.append("lambda-overflow")
                break

    n_res = r.size
    report = LearnReport(
        nmse=0.0, mse=energy / n_res, variance=0.0,
        iterations=iterations, final_objective=energy,
        converged=converged, reason=reason, notes=tuple(notes),
    )
    return p, report
