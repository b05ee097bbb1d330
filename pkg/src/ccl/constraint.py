"""Learning constraint matrices from null-space-only observations.

Observed actions are assumed to satisfy u = N u for the (unknown)
null-space projector N of the constraint, so a candidate constraint row
is scored by how much observation energy it captures: a correct row is
orthogonal to every observation.  Rows are recovered greedily, each new
row searched inside the orthogonal complement of the rows already found.

Three model families are covered: a constant constraint (grid search plus
local refinement over hyperspherical angles), a state-dependent
constraint whose row angles are RBF functions of the state, and the same
state-dependent scheme expressed as a selection over a user-supplied
feature matrix (for example a manipulator Jacobian).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import LearnOptions, LearnReport, RbfModel, _freeze
from .mathkit import (
    LmProblem,
    kmeans_centers,
    lm_solve,
    nullspace_projector,
    orthogonal_complement_rotation,
    pinv_truncated,
    rbf_design,
    rbf_features,
    rbf_width_from_centers,
    ridge_regression,
    unit_vector_angle_jacobians,
    unit_vector_from_angles,
    unit_vectors_from_angles,
)

GRID_POINT_BUDGET = 200_000
ROW_ACCEPT_FRACTION = 0.1  # state-dependent rows may keep this energy share


# ---------------------------------------------------------------------------
# feature matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureMatrixProvider:
    """Named callable producing the feature matrix Phi(x), shape
    (dim_phi, dim_u), constant dimensions over the state space.  The name
    makes learned selection models serializable."""

    name: str
    dim_phi: int
    dim_u: int
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        phi = np.atleast_2d(np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float))
        if phi.shape != (self.dim_phi, self.dim_u):
            raise ValueError(f"feature matrix has shape {phi.shape}, "
                             f"expected {(self.dim_phi, self.dim_u)}")
        return phi


def identity_features(dim_u) -> FeatureMatrixProvider:
    eye = np.eye(dim_u)
    return FeatureMatrixProvider(name=f"identity:{dim_u}", dim_phi=dim_u,
                                 dim_u=dim_u, fn=lambda x: eye)


def twolink_jacobian_features(l1=1.0, l2=1.0) -> FeatureMatrixProvider:
    from .datagen import TwoLinkArm

    arm = TwoLinkArm(l1, l2)
    return FeatureMatrixProvider(name=f"twolink-jacobian:{float(l1)},{float(l2)}",
                                 dim_phi=2, dim_u=2, fn=arm.jacobian)


def feature_provider_from_name(name) -> FeatureMatrixProvider:
    """Rebuild a provider from its registry name (used when loading
    serialized selection models)."""
    kind, _, args = name.partition(":")
    if kind == "identity":
        return identity_features(int(args))
    if kind == "twolink-jacobian":
        l1, l2 = (float(v) for v in args.split(","))
        return twolink_jacobian_features(l1, l2)
    raise ValueError(f"unknown feature provider {name!r}")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _canonical_sign(row, tol=1e-9):
    """+1/-1 so that the first non-negligible component comes out positive."""
    for v in row:
        if abs(v) > tol:
            return 1.0 if v > 0 else -1.0
    return 1.0


def _normalized_rows(mat):
    norms = np.linalg.norm(mat, axis=1)
    out = mat.copy()
    keep = norms > 1e-12
    out[keep] = mat[keep] / norms[keep, None]
    return out


def objective_state_independent(a_rows, second_moment):
    """Violation energy of a constant candidate constraint: the summed
    squared projection of the observations onto its rows, computed as
    trace(A M A^T) from the precomputed second moment M = sum_n u_n u_n^T.

    Assumes orthonormal candidate rows (their pseudoinverse is then the
    plain transpose).
    """
    a = np.atleast_2d(np.asarray(a_rows, dtype=float))
    m = np.asarray(second_moment, dtype=float)
    if m.shape != (a.shape[1], a.shape[1]):
        raise ValueError(f"second moment {m.shape} does not match rows {a.shape}")
    return max(0.0, float(np.trace(a @ m @ a.T)))


def objective_avn(omega, bx, rotated_moments):
    """Violation energy of one state-dependent row in its rotated frame.

    The row angles are omega @ beta(x); rotated_moments holds, per sample,
    the second moment of the observation expressed in the complement frame
    of the rows already learned, shape (f, f, N).
    """
    om = np.atleast_2d(np.asarray(omega, dtype=float))
    bx = np.atleast_2d(np.asarray(bx, dtype=float))
    moments = np.asarray(rotated_moments, dtype=float)
    if moments.shape[0] != om.shape[0] + 1 or moments.shape[2] != bx.shape[1]:
        raise ValueError("dimension mismatch between omega, bx and moments")
    a = unit_vectors_from_angles(om @ bx)
    return float(np.einsum("in,ijn,jn->", a, moments, a))


# ---------------------------------------------------------------------------
# state-independent constraints
# ---------------------------------------------------------------------------

def _materialize_independent_rows(angles, dim_u):
    rows = []
    for th in angles:
        frame = (np.eye(dim_u) if not rows
                 else orthogonal_complement_rotation(np.vstack(rows)))
        row = unit_vector_from_angles(th) @ frame
        rows.append(_canonical_sign(row) * row)
    return np.vstack(rows)


@dataclass(frozen=True)
class StateIndependentConstraint:
    """Constant constraint rows parameterized by hyperspherical angles.

    Row s (starting at 1) carries dim_u - s angles expressed in the
    orthogonal complement of the earlier rows; materialized rows are
    mutually orthonormal with a canonical sign (first non-negligible
    component positive).
    """

    angles: tuple
    dim_u: int

    def __post_init__(self):
        angles = tuple(_freeze(np.asarray(a, dtype=float).ravel()) for a in self.angles)
        if not 1 <= len(angles) <= self.dim_u - 1:
            raise ValueError("need between 1 and dim_u - 1 rows")
        for s, th in enumerate(angles):
            if th.size != self.dim_u - 1 - s:
                raise ValueError(f"row {s + 1} must have {self.dim_u - 1 - s} angles")
        object.__setattr__(self, "angles", angles)

    @property
    def dim_b(self):
        return len(self.angles)

    def rows(self):
        return _materialize_independent_rows(self.angles, self.dim_u)

    def projector(self, threshold=1e-8):
        return nullspace_projector(self.rows(), threshold).projector

    def projector_stack(self, xs):
        n = np.atleast_2d(xs).shape[1]
        return np.repeat(self.projector()[:, :, None], n, axis=2)


def _grid_seed(m_rot, resolution):
    """Best angle vector on a uniform [0, pi) lattice.  The per-angle
    resolution shrinks when the full lattice would exceed the evaluation
    budget (only relevant above three action dimensions)."""
    n_angles = m_rot.shape[0] - 1
    res = resolution
    if res ** n_angles > GRID_POINT_BUDGET:
        res = max(3, int(GRID_POINT_BUDGET ** (1.0 / n_angles)))
    axis = np.pi * np.arange(res) / res
    grids = np.meshgrid(*([axis] * n_angles), indexing="ij")
    thetas = np.stack([g.ravel() for g in grids])
    a = unit_vectors_from_angles(thetas)
    energy = np.einsum("ip,ij,jp->p", a, m_rot, a)
    return thetas[:, int(np.argmin(energy))].copy()


def _refine_row(m_rot, theta0, opts):
    """Polish a lattice seed by damped least squares on the factorized
    energy: with M = L^T L the residual is L a(theta)."""
    lam, vec = np.linalg.eigh(m_rot)
    factor = np.sqrt(np.maximum(lam, 0.0))[:, None] * vec.T

    def residual(th):
        return factor @ unit_vector_from_angles(th)

    def jacobian(th):
        return factor @ unit_vector_angle_jacobians(np.asarray(th)[:, None])[:, :, 0]

    theta, rep = lm_solve(LmProblem(residual=residual, p0=theta0,
                                    jacobian=jacobian, options=opts))
    return theta, rep.final_objective, rep.iterations, rep.converged


def learn_nhat(w_obs, options: Optional[LearnOptions] = None):
    """Fit a constant constraint to null-space observations (dim_u, N).

    Rows are found greedily: lattice search over the row angles inside
    the complement of the accepted rows, refined by damped least squares.
    A candidate row is kept while the energy it captures stays below
    tol_fun * max(1, remaining energy); with rich observations this stops
    exactly at the true constraint dimension.  Noisy observations leak
    energy into every direction, so tol_fun must be raised to roughly the
    noise-to-signal energy ratio for rows to be accepted.  If even the
    first row captures too much energy, no constraint is consistent with
    the data: the best-effort single row is returned and the report
    carries the note ``no-constraint-found``.

    Returns (StateIndependentConstraint, LearnReport).
    """
    opts = options or LearnOptions()
    u = np.atleast_2d(np.asarray(w_obs, dtype=float))
    dim_u, n = u.shape
    if n < dim_u:
        raise ValueError(f"need at least dim_u={dim_u} samples, got {n}")
    if not np.isfinite(u).all():
        raise ValueError("observations must be finite")
    if np.max(np.abs(u)) == 0.0:
        raise ValueError("all-zero observations: constraint unidentifiable")

    second = u @ u.T
    angles, rows, trace_hist = [], [], []
    first_candidate = None
    iterations = 0
    converged = True

    for s in range(dim_u - 1):
        frame = (np.eye(dim_u) if not rows
                 else orthogonal_complement_rotation(np.vstack(rows)))
        m_rot = frame @ second @ frame.T
        theta0 = _grid_seed(m_rot, opts.search_resolution)
        theta, e_row, its, ok = _refine_row(m_rot, theta0, opts)
        iterations += its
        if s == 0:
            first_candidate = theta
        if e_row > opts.tol_fun * max(1.0, float(np.trace(m_rot))):
            break
        converged = converged and ok
        angles.append(theta)
        row = unit_vector_from_angles(theta) @ frame
        rows.append(_canonical_sign(row) * row)
        trace_hist.append(objective_state_independent(np.vstack(rows), second))

    notes = ()
    if not angles:
        notes = ("no-constraint-found",)
        angles = [first_candidate]

    constraint = StateIndependentConstraint(angles=tuple(angles), dim_u=dim_u)
    final = objective_state_independent(constraint.rows(), second)
    report = LearnReport.from_errors(
        mse=final / n, variance=float(np.var(u, axis=1).sum()),
        iterations=iterations, final_objective=final,
        converged=converged, reason="fun-tol",
        objective_trace=tuple(trace_hist), notes=notes,
    )
    return constraint, report


# ---------------------------------------------------------------------------
# state-dependent constraints
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StateDependentConstraintModel:
    """Constraint rows whose orientation angles are RBF functions of the
    state: theta_s(x) = omega_s beta(x).

    In "alpha" mode the rows live directly in action space; in "lambda"
    mode they select within a feature matrix Phi(x) (row-normalized), the
    effective constraint being A(x) = Lambda(x) Phi_normalized(x).  The
    selection rows are mutually orthonormal at every state.  ``signs``
    are fixed per-row flips making the first non-negligible component
    positive at the training reference state.
    """

    omegas: tuple
    signs: tuple
    rbf: RbfModel
    mode: str
    dim_u: int
    feature_name: str = None

    def __post_init__(self):
        if self.mode not in ("alpha", "lambda"):
            raise ValueError(f"unknown mode {self.mode!r}")
        omegas = tuple(_freeze(np.atleast_2d(np.asarray(o, dtype=float))) for o in self.omegas)
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "signs", tuple(float(s) for s in self.signs))
        if len(self.signs) != len(omegas):
            raise ValueError("one sign per row required")
        sel = self.sel_dim
        for s, om in enumerate(omegas):
            if om.shape[0] != sel - 1 - s or om.shape[1] != self.rbf.n_basis:
                raise ValueError(f"row {s + 1} weight matrix has shape {om.shape}, "
                                 f"expected {(sel - 1 - s, self.rbf.n_basis)}")
        if self.mode == "lambda" and self.feature_name is None:
            raise ValueError("lambda mode needs a feature provider name")

    @property
    def dim_b(self):
        return len(self.omegas)

    @property
    def sel_dim(self):
        if self.mode == "alpha":
            return self.dim_u
        return feature_provider_from_name(self.feature_name).dim_phi

    def _provider(self):
        return (None if self.mode == "alpha"
                else feature_provider_from_name(self.feature_name))

    def selection_rows(self, x):
        """Orthonormal selection rows at one state, shape (dim_b, sel_dim)."""
        bx = rbf_features(x, self.rbf.centers, self.rbf.width)
        return _selection_rows_single(self.omegas, self.signs, bx, self.sel_dim)

    def constraint_rows(self, x):
        """Materialized constraint rows A(x), shape (dim_b, dim_u)."""
        sel = self.selection_rows(x)
        if self.mode == "alpha":
            return sel
        return sel @ _normalized_rows(self._provider()(x))

    def projector(self, x, threshold=1e-8):
        return nullspace_projector(self.constraint_rows(x), threshold).projector

    def projector_stack(self, xs, threshold=1e-8):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        n = xs.shape[1]
        out = np.empty((self.dim_u, self.dim_u, n))
        for i in range(n):
            out[:, :, i] = self.projector(xs[:, i], threshold)
        return out


def _selection_rows_single(omegas, signs, bx, sel_dim):
    rows = []
    frame = np.eye(sel_dim)
    for s, (om, sg) in enumerate(zip(omegas, signs)):
        local = (np.ones(1) if om.shape[0] == 0
                 else unit_vector_from_angles(om @ bx))
        rows.append(sg * (local @ frame))
        if s + 1 < len(omegas):
            frame = orthogonal_complement_rotation(np.vstack(rows))
    return np.vstack(rows)


def _complement_frames(rows_stack):
    """Per-sample orthogonal complements of accumulated rows
    (s, sel_dim, N) -> (sel_dim - s, sel_dim, N)."""
    s, sel_dim, n = rows_stack.shape
    out = np.empty((sel_dim - s, sel_dim, n))
    for i in range(n):
        out[:, :, i] = orthogonal_complement_rotation(rows_stack[:, :, i])
    return out


def _row_problem(bx, u_rot):
    """Residual/Jacobian closures for one state-dependent row: the
    residual of sample n is a(omega beta_n) . u_rot_n."""
    g, n = bx.shape
    n_ang = u_rot.shape[0] - 1

    def residual(wvec):
        om = wvec.reshape(n_ang, g)
        a = unit_vectors_from_angles(om @ bx)
        return (a * u_rot).sum(axis=0)

    def jacobian(wvec):
        om = wvec.reshape(n_ang, g)
        jac_a = unit_vector_angle_jacobians(om @ bx)
        gvec = np.einsum("kin,kn->in", jac_a, u_rot)
        return np.einsum("in,jn->nij", gvec, bx).reshape(n, n_ang * g)

    return residual, jacobian


def learn_alpha(w_obs, xs, options: Optional[LearnOptions] = None,
                num_basis=16, dim_b=None):
    """Fit a state-dependent constraint directly in action space.

    Builds a shared RBF basis (K-means centers, mean-center-distance
    width), then recovers each row's angle weights by multi-start damped
    least squares inside the per-sample complement of the earlier rows.
    ``dim_b`` fixes the number of rows; when None, rows are added while
    they capture at most a small fraction of the observation energy.

    Returns (StateDependentConstraintModel, LearnReport).
    """
    return _learn_state_dependent(w_obs, xs, None, options, num_basis, dim_b)


def learn_lambda(w_obs, xs, phi: FeatureMatrixProvider,
                 options: Optional[LearnOptions] = None,
                 num_basis=16, dim_b=None):
    """Fit a state-dependent selection over a feature matrix.

    Observations are mapped through the row-normalized feature matrix
    (u -> Phi_hat(x) u) and the selection rows are learned in that space
    with the same greedy scheme as :func:`learn_alpha`; the reported
    objective is evaluated on the exact materialized constraint using the
    truncated pseudoinverse.
    """
    return _learn_state_dependent(w_obs, xs, phi, options, num_basis, dim_b)


def _learn_state_dependent(w_obs, xs, phi, options, num_basis, dim_b):
    opts = options or LearnOptions()
    u = np.atleast_2d(np.asarray(w_obs, dtype=float))
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    dim_u, n = u.shape
    if xs.shape[1] != n:
        raise ValueError("states and observations disagree on sample count")
    if n < dim_u:
        raise ValueError(f"need at least dim_u={dim_u} samples, got {n}")
    if num_basis > n:
        raise ValueError("cannot use more basis functions than samples")
    if float(np.ptp(xs, axis=1).max(initial=0.0)) < 1e-12:
        raise ValueError("state variation degenerate: all states identical")

    centers = kmeans_centers(xs, num_basis, seed=opts.rng_seed)
    width = rbf_width_from_centers(centers)
    bx = rbf_design(xs, centers, width)

    if phi is None:
        mode, sel_dim, feature_name = "alpha", dim_u, None
        target = u
    else:
        mode, sel_dim, feature_name = "lambda", phi.dim_phi, phi.name
        target = np.empty((sel_dim, n))
        for i in range(n):
            mat = phi(xs[:, i])
            if np.max(np.abs(mat)) < 1e-12:
                raise ValueError(f"feature matrix has rank 0 at sample {i}")
            target[:, i] = _normalized_rows(mat) @ u[:, i]

    max_rows = sel_dim if dim_b is not None else sel_dim - 1
    limit = max_rows if dim_b is None else min(dim_b, max_rows)
    total_energy = float((target ** 2).sum())
    rng = np.random.default_rng(opts.rng_seed)

    omegas, signs = [], []
    rows_stack = None  # (s, sel_dim, N)
    trace_hist = []
    iterations = 0
    converged = True
    first_candidate = None

    for s in range(limit):
        frames = (np.repeat(np.eye(sel_dim)[:, :, None], n, axis=2) if rows_stack is None
                  else _complement_frames(rows_stack))
        u_rot = np.einsum("fjn,jn->fn", frames, target)
        n_ang = sel_dim - 1 - s

        if n_ang == 0:
            omega = np.zeros((0, bx.shape[0]))
            e_row = float((u_rot[0] ** 2).sum())
            row_ok = True
        else:
            residual, jacobian = _row_problem(bx, u_rot)
            # first start: a constant-angle anchor from a lattice search on
            # the pooled moments, mapped into weight space by ridge fit
            theta_const = _grid_seed(u_rot @ u_rot.T, opts.search_resolution)
            anchor = ridge_regression(bx, np.repeat(theta_const[:, None], n, axis=1),
                                      opts.regularization)
            best = None
            for restart in range(opts.num_restarts):
                if restart == 0:
                    w0 = anchor.ravel()
                elif restart == 1:
                    w0 = np.zeros(n_ang * bx.shape[0])
                else:
                    w0 = rng.normal(0.0, 0.4, n_ang * bx.shape[0])
                sol, rep = lm_solve(LmProblem(residual=residual, p0=w0,
                                              jacobian=jacobian, options=opts))
                iterations += rep.iterations
                if best is None or rep.final_objective < best[1]:
                    best = (sol, rep.final_objective, rep.converged)
            omega = best[0].reshape(n_ang, bx.shape[0])
            e_row, row_ok = best[1], best[2]

        if s == 0:
            first_candidate = (omega, row_ok)
        if dim_b is None and e_row > ROW_ACCEPT_FRACTION * max(total_energy, 1e-30):
            break
        converged = converged and row_ok
        omega, sign, rows_stack = _accept_row(omega, frames, bx, rows_stack, sel_dim)
        omegas.append(omega)
        signs.append(sign)
        trace_hist.append(e_row)

    notes = ()
    if not omegas:
        notes = ("no-constraint-found",)
        omega, row_ok = first_candidate
        frames = np.repeat(np.eye(sel_dim)[:, :, None], n, axis=2)
        omega, sign, rows_stack = _accept_row(omega, frames, bx, None, sel_dim)
        omegas, signs = [omega], [sign]
        converged = converged and row_ok

    model = StateDependentConstraintModel(
        omegas=tuple(omegas), signs=tuple(signs),
        rbf=RbfModel(centers=centers, width=width,
                     weights=np.zeros((0, num_basis))),
        mode=mode, dim_u=dim_u, feature_name=feature_name,
    )
    final = _exact_projection_energy(model, xs, u, opts.svd_threshold)
    report = LearnReport.from_errors(
        mse=final / n, variance=float(np.var(u, axis=1).sum()),
        iterations=iterations, final_objective=final,
        converged=converged, reason="fun-tol",
        objective_trace=tuple(trace_hist), notes=notes,
    )
    return model, report


def _accept_row(omega, frames, bx, rows_stack, sel_dim):
    """Materialize a learned row over all samples, fix its canonical sign
    at the reference (first) sample, and extend the row stack."""
    n = bx.shape[1]
    if omega.shape[0] == 0:
        local = np.ones((1, n))
    else:
        local = unit_vectors_from_angles(omega @ bx)
    rows = np.einsum("fn,fjn->jn", local, frames)  # (sel_dim, N)
    sign = _canonical_sign(rows[:, 0])
    rows = sign * rows
    new = rows[None, :, :]
    stack = new if rows_stack is None else np.concatenate([rows_stack, new], axis=0)
    return omega, sign, stack


def _exact_projection_energy(model, xs, u, threshold):
    """Sum over samples of the observation energy inside the learned
    constraint's row space, via the truncated pseudoinverse."""
    total = 0.0
    for i in range(xs.shape[1]):
        a = model.constraint_rows(xs[:, i])
        p = pinv_truncated(a, threshold) @ a
        total += float(u[:, i] @ p @ u[:, i])
    return max(0.0, total)
