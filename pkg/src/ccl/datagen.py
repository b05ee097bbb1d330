"""Synthetic demonstration generators: a planar toy system driven by a
limit-cycle or linear-attractor policy under linear/parabolic constraints,
and a two-link planar arm constrained through rows of its Jacobian.

Each generated sample is decomposed as u = v + w (+ optional noise) with
v the task-space component pinv(A) b and w the null-space component N pi,
so ground-truth channels are always available for evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .core import DemonstrationSet
from .mathkit import nullspace_projector, pinv_truncated


def policy_limit_cycle(x, radius=0.5, gain=1.0, angular_rate=1.0):
    """Planar limit-cycle field: radial attraction to the circle r = radius
    plus constant-rate rotation.  Accepts a single state (2,) or a batch
    (2, N)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = x.reshape(2, -1)
    r2 = (xs ** 2).sum(axis=0)
    shrink = gain * (radius ** 2 - r2)
    out = np.vstack((xs[0] * shrink - angular_rate * xs[1],
                     xs[1] * shrink + angular_rate * xs[0]))
    return out[:, 0] if single else out


def policy_linear(x, gain, target):
    """Linear attractor -gain (x - target); zero at the target."""
    x = np.asarray(x, dtype=float)
    gain = np.atleast_2d(np.asarray(gain, dtype=float))
    target = np.asarray(target, dtype=float)
    single = x.ndim == 1
    xs = x.reshape(len(target), -1)
    out = -gain @ (xs - target[:, None])
    return out[:, 0] if single else out


@dataclass(frozen=True)
class TwoLinkArm:
    """Planar two-revolute-joint arm with analytic kinematics."""

    l1: float = 1.0
    l2: float = 1.0

    def forward_kinematics(self, q):
        q1, q2 = float(q[0]), float(q[1])
        return np.array([self.l1 * np.cos(q1) + self.l2 * np.cos(q1 + q2),
                         self.l1 * np.sin(q1) + self.l2 * np.sin(q1 + q2)])

    def jacobian(self, q):
        q1, q2 = float(q[0]), float(q[1])
        s1, c1 = np.sin(q1), np.cos(q1)
        s12, c12 = np.sin(q1 + q2), np.cos(q1 + q2)
        return np.array([[-self.l1 * s1 - self.l2 * s12, -self.l2 * s12],
                         [self.l1 * c1 + self.l2 * c12, self.l2 * c12]])


def twolink_jacobian(q, l1=1.0, l2=1.0):
    """End-effector Jacobian of the planar two-link arm at joint angles q."""
    return TwoLinkArm(l1, l2).jacobian(q)


@dataclass(frozen=True)
class GeneratorConfig:
    """Settings for :func:`generate`.

    ``constraints`` holds one spec per group (K = len), each a tuple:
    ("none",), ("fixed-angle", degrees), ("parabolic", curvature) or
    ("jacobian-rows", (row, ...)).  ``task_b`` is ("zero",),
    ("constant", (values...)) or ("sinusoid", amplitude, cycles, phase)
    where the sinusoid runs over the sample index and is mapped through
    the constraint so the task motion is always feasible.
    """

    system: str = "toy2d"
    policy: str = "limit-cycle"
    constraints: tuple = (("fixed-angle", 30.0),)
    task_b: tuple = ("zero",)
    n_per_group: int = 500
    noise_std: float = 0.0
    rng_seed: int = 0
    # policy parameters
    cycle_radius: float = 0.5
    cycle_gain: float = 1.0
    cycle_rate: float = 1.0
    attractor_gain: tuple = ((1.0, 0.0), (0.0, 1.0))
    attractor_target: tuple = (0.0, 0.0)
    # sampling ranges
    state_low: tuple = (-1.0, -1.0)
    state_high: tuple = (1.0, 1.0)
    joint_low: tuple = (0.0, 0.0)
    joint_high: tuple = (np.pi / 2, np.pi / 2)
    arm_lengths: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.system not in ("toy2d", "twolink"):
            raise ValueError(f"unknown system {self.system!r}")
        if self.policy not in ("limit-cycle", "linear-attractor"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if len(self.constraints) < 1:
            raise ValueError("need at least one constraint group")
        if self.n_per_group < 1:
            raise ValueError("n_per_group must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def _constraint_matrix(spec, x, config, arm):
    """Constraint rows A(x) for one sample, or None for no constraint."""
    kind = spec[0]
    if kind == "none":
        return None
    if kind == "fixed-angle":
        th = np.deg2rad(float(spec[1]))
        return np.array([[np.cos(th), np.sin(th)]])
    if kind == "parabolic":
        a = float(spec[1])
        return np.array([[-2.0 * a * x[0], 1.0]])
    if kind == "jacobian-rows":
        rows = tuple(int(r) for r in np.atleast_1d(spec[1]))
        jac = arm.jacobian(x)
        if any(r < 0 or r >= jac.shape[0] for r in rows):
            raise ValueError(f"jacobian row index out of range: {rows}")
        return jac[list(rows), :]
    raise ValueError(f"unknown constraint kind {kind!r}")


def _task_values(task_b, n, rng):
    """Per-sample scalar task drive s_n; b_n = A_n (s_n * ones)."""
    kind = task_b[0]
    if kind == "zero":
        return None
    if kind == "constant":
        return None  # handled directly as a b vector
    if kind == "sinusoid":
        amp, cycles, phase = (float(v) for v in task_b[1:4])
        idx = np.arange(n)
        return amp * np.sin(2.0 * np.pi * cycles * idx / n + phase)
    raise ValueError(f"unknown task_b kind {kind!r}")


def generate(config: GeneratorConfig) -> DemonstrationSet:
    """Sample a demonstration set with ground-truth decomposition.

    For each group k the states are drawn i.i.d. uniform (state box for
    the toy system, joint box for the arm), the policy is evaluated, and
    the action is composed as u = pinv(A) b + N pi + noise.  Group k uses
    the derived seed rng_seed + k, so groups are independent and the
    whole dataset is reproducible bit-for-bit.
    """
    arm = TwoLinkArm(*config.arm_lengths)
    low, high = ((config.joint_low, config.joint_high) if config.system == "twolink"
                 else (config.state_low, config.state_high))
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    dim_x = dim_u = 2

    blocks = {name: [] for name in ("x", "u", "pi", "v", "w", "k")}
    for k, spec in enumerate(config.constraints):
        rng = np.random.default_rng(config.rng_seed + k)
        n = config.n_per_group
        xs = rng.uniform(low[:, None], high[:, None], size=(dim_x, n))
        if config.policy == "limit-cycle":
            pi = policy_limit_cycle(xs, config.cycle_radius, config.cycle_gain,
                                    config.cycle_rate)
        else:
            pi = policy_linear(xs, config.attractor_gain, config.attractor_target)

        drive = _task_values(config.task_b, n, rng)
        v = np.zeros((dim_u, n))
        w = np.empty((dim_u, n))
        for i in range(n):
            a = _constraint_matrix(spec, xs[:, i], config, arm)
            if a is None:
                w[:, i] = pi[:, i]
                continue
            if a.shape[0] >= dim_u:
                raise ValueError("constraint dimensionality must be < dim_u")
            pair = nullspace_projector(a)
            w[:, i] = pair.projector @ pi[:, i]
            if config.task_b[0] == "constant":
                b = np.asarray(config.task_b[1], dtype=float).reshape(a.shape[0])
            elif drive is not None:
                b = a @ (drive[i] * np.ones(dim_u))
            else:
                b = None
            if b is not None:
                v[:, i] = pinv_truncated(a) @ b

        u = v + w
        if config.noise_std > 0:
            u = u + rng.normal(0.0, config.noise_std, size=u.shape)
        blocks["x"].append(xs)
        blocks["u"].append(u)
        blocks["pi"].append(pi)
        blocks["v"].append(v)
        blocks["w"].append(w)
        blocks["k"].append(np.full(n, k, dtype=int))

    return DemonstrationSet(
        states=np.hstack(blocks["x"]),
        actions=np.hstack(blocks["u"]),
        group_ids=np.concatenate(blocks["k"]),
        policy=np.hstack(blocks["pi"]),
        task_component=np.hstack(blocks["v"]),
        null_component=np.hstack(blocks["w"]),
    )


def true_projectors(config: GeneratorConfig, data: DemonstrationSet):
    """Ground-truth null-space projector stack (dim_u, dim_u, N) for data
    produced by :func:`generate` with the same config."""
    arm = TwoLinkArm(*config.arm_lengths)
    n = data.n_samples
    out = np.empty((data.dim_u, data.dim_u, n))
    for i in range(n):
        spec = config.constraints[int(data.group_ids[i])]
        a = _constraint_matrix(spec, data.states[:, i], config, arm)
        out[:, :, i] = (np.eye(data.dim_u) if a is None
                        else nullspace_projector(a).projector)
    return out
