import numpy as np
import pytest

from ccl.core import LearnOptions, RbfModel
from ccl.datagen import GeneratorConfig, generate
from ccl.mathkit import finite_difference_jacobian, rbf_design, ridge_regression
from ccl.metrics import error_npe
from ccl.nullspace import NullspaceComponentModel, learn_ncl, make_ncl_model, objective_ncl, predict_ncl


def _scenario(seed=0, n=600):
    """Fixed constraint, fixed null-space policy, task drive varying over
    samples: the setting where the null-space component is identifiable."""
    cfg = GeneratorConfig(constraints=(("fixed-angle", 60.0),),
                          task_b=("sinusoid", 0.5, 3.0, 0.0),
                          n_per_group=n, rng_seed=seed)
    return generate(cfg)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def test_objective_zero_when_model_equals_pure_null_data():
    rng = np.random.default_rng(0)
    bx = rng.uniform(0.1, 1.0, (4, 50))
    weights = rng.normal(size=(2, 4))
    u = weights @ bx  # observations exactly equal the model output
    value, _ = objective_ncl(weights, bx, u)
    assert value < 1e-24


def test_objective_zero_when_task_component_orthogonal():
    rng = np.random.default_rng(1)
    bx = rng.uniform(0.1, 1.0, (4, 50))
    weights = rng.normal(size=(2, 4))
    w = weights @ bx
    # per-sample v orthogonal to w
    perp = np.vstack([-w[1], w[0]])
    v = perp * rng.normal(size=50)
    value, _ = objective_ncl(weights, bx, v + w)
    assert value < 1e-20


def test_objective_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    bx = rng.uniform(0.1, 1.0, (5, 40))
    u = rng.normal(size=(2, 40))
    for _ in range(10):
        weights = rng.normal(size=(2, 5))
        _, grad = objective_ncl(weights, bx, u)
        fd = finite_difference_jacobian(
            lambda w: np.array([objective_ncl(w.reshape(2, 5), bx, u)[0]]),
            weights.ravel())
        scale = max(1.0, np.abs(grad).max())
        assert np.max(np.abs(grad.ravel() - fd.ravel())) / scale < 1e-5


def test_objective_handles_near_zero_predictions():
    bx = np.ones((1, 3))
    u = np.ones((2, 3))
    value, grad = objective_ncl(np.zeros((2, 1)), bx, u)
    assert value == 0.0  # zero predictions contribute their own (zero) norm
    assert np.isfinite(grad).all()


def test_projector_scale_invariance():
    rng = np.random.default_rng(3)
    for _ in range(20):
        w = rng.normal(size=3)
        p = np.outer(w, w) / (w @ w)
        for c in (0.5, 2.0, 7.3):
            pc = np.outer(c * w, c * w) / ((c * w) @ (c * w))
            assert np.max(np.abs(p - pc)) < 1e-12


# ---------------------------------------------------------------------------
# learning
# ---------------------------------------------------------------------------

def test_learn_ncl_recovers_null_component():
    data = _scenario(seed=4)
    model0 = make_ncl_model(data.states, data.dim_u, num_basis=16, seed=0)
    model, report = learn_ncl(data.states, data.actions, model0,
                              LearnOptions(max_iter=600))
    npe = error_npe(data.null_component, model.predict(data.states))
    assert npe.normalized < 0.05
    assert report.converged


def test_learn_ncl_pure_null_space_matches_ridge():
    cfg = GeneratorConfig(constraints=(("fixed-angle", 25.0),), n_per_group=500,
                          rng_seed=5)
    data = generate(cfg)  # no task drive: u is pure null-space motion
    model0 = make_ncl_model(data.states, data.dim_u, num_basis=16, seed=0)
    model, _ = learn_ncl(data.states, data.actions, model0)
    bx = rbf_design(data.states, model0.rbf.centers, model0.rbf.width)
    ridge = ridge_regression(bx, data.actions)
    err_lm = error_npe(data.actions, model.rbf.weights @ bx).normalized
    err_ridge = error_npe(data.actions, ridge @ bx).normalized
    assert abs(err_lm - err_ridge) < 1e-3


def test_learn_ncl_rejects_more_basis_than_samples():
    rng = np.random.default_rng(6)
    xs = rng.normal(size=(2, 10))
    model0 = NullspaceComponentModel(rbf=RbfModel(centers=rng.normal(size=(2, 12)),
                                                  width=1.0,
                                                  weights=np.zeros((2, 12))))
    with pytest.raises(ValueError):
        learn_ncl(xs, rng.normal(size=(2, 10)), model0)


def test_learn_ncl_beats_naive_regression_at_rejecting_task_motion():
    wins = 0
    for seed in range(20):
        data = _scenario(seed=100 + seed, n=300)
        model0 = make_ncl_model(data.states, data.dim_u, num_basis=12, seed=0)
        bx = rbf_design(data.states, model0.rbf.centers, model0.rbf.width)
        naive = ridge_regression(bx, data.actions)
        true_w = ridge_regression(bx, data.null_component)
        obj_true, _ = objective_ncl(true_w, bx, data.actions)
        obj_naive, _ = objective_ncl(naive, bx, data.actions)
        wins += obj_true < obj_naive
    assert wins == 20


def test_learn_ncl_init_insensitive_final_objective():
    # convex-like instance (pure null-space data): two different optimizer
    # starting points on the same basis converge to objectives within 1%
    from ccl.mathkit import LmProblem, lm_solve
    from ccl.nullspace import _ncl_problem

    cfg = GeneratorConfig(constraints=(("fixed-angle", 60.0),), n_per_group=600,
                          rng_seed=7)
    data = generate(cfg)
    model0 = make_ncl_model(data.states, data.dim_u, num_basis=16, seed=0)
    bx = rbf_design(data.states, model0.rbf.centers, model0.rbf.width)
    # make the observations exactly representable so the global basin is
    # reachable from both starts
    w_true = ridge_regression(bx, data.actions)
    u = w_true @ bx
    residual, jacobian = _ncl_problem(bx, u, data.dim_u)
    ridge_start = ridge_regression(bx, u).ravel()
    rng = np.random.default_rng(99)
    objectives = []
    for start in (ridge_start, ridge_start + rng.normal(0, 0.2, ridge_start.size)):
        _, report = lm_solve(LmProblem(residual=residual, p0=start,
                                       jacobian=jacobian,
                                       options=LearnOptions(max_iter=800)))
        objectives.append(report.final_objective)
    energy = float((u ** 2).sum())
    assert abs(objectives[0] - objectives[1]) / energy < 0.01


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def test_predict_zero_weights():
    model = NullspaceComponentModel(rbf=RbfModel(centers=np.zeros((2, 3)),
                                                 width=1.0,
                                                 weights=np.zeros((2, 3))))
    out = predict_ncl(model, np.random.default_rng(8).normal(size=(2, 9)))
    assert np.array_equal(out, np.zeros((2, 9)))


def test_predict_at_single_center():
    center = np.array([[0.4], [-0.2]])
    weights = np.array([[1.5], [-0.7]])
    model = NullspaceComponentModel(rbf=RbfModel(centers=center, width=0.8,
                                                 weights=weights))
    out = predict_ncl(model, center)
    assert np.allclose(out[:, 0], weights[:, 0])  # feature is exactly 1 there


def test_predict_matches_loop_oracle():
    rng = np.random.default_rng(9)
    model = NullspaceComponentModel(rbf=RbfModel(centers=rng.normal(size=(2, 5)),
                                                 width=0.9,
                                                 weights=rng.normal(size=(2, 5))))
    xs = rng.normal(size=(2, 12))
    out = predict_ncl(model, xs)
    for n in range(12):
        feats = np.exp(-((xs[:, [n]] - model.rbf.centers) ** 2).sum(axis=0)
                       / (2 * 0.9))
        assert np.max(np.abs(out[:, n] - model.rbf.weights @ feats)) < 1e-14
