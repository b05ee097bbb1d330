"""Shared domain types: demonstration datasets, solver options, fit reports
and the radial-basis-function model container, plus the delimited text
format used to exchange datasets between the CLI and the learners.

All containers are immutable after construction (their numpy buffers are
marked read-only), so they can be shared freely across threads.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

CONVERGENCE_REASONS = ("fun-tol", "x-tol", "max-iter")


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LearnOptions:
    """Knobs shared by every learner.

    tol_fun / tol_x are the residual and parameter tolerances of the
    damped least-squares solver, search_resolution is the number of
    candidate angles per dimension in grid searches, and svd_threshold
    is the relative cutoff for truncated pseudoinversion.
    """

    tol_fun: float = 1e-9
    tol_x: float = 1e-9
    max_iter: int = 1000
    search_resolution: int = 90
    num_restarts: int = 5
    svd_threshold: float = 1e-8
    regularization: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self):
        if not self.tol_fun > 0:
            raise ValueError("tol_fun must be > 0")
        if not self.tol_x > 0:
            raise ValueError("tol_x must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.search_resolution < 2:
            raise ValueError("search_resolution must be >= 2")
        if self.num_restarts < 1:
            raise ValueError("num_restarts must be >= 1")
        if self.svd_threshold < 0:
            raise ValueError("svd_threshold must be >= 0")
        if self.regularization < 0:
            raise ValueError("regularization must be >= 0")
        if not 0 <= int(self.rng_seed) < 2 ** 64:
            raise ValueError("rng_seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class LearnReport:
    """Outcome statistics of a single fit.

    ``converged`` is qualified by ``reason`` (one of ``fun-tol``,
    ``x-tol``, ``max-iter``).  ``objective_trace`` records intermediate
    objective values for greedy learners (one entry per accepted
    constraint row); ``notes`` carries free-form diagnostic flags such
    as ``no-constraint-found``.
    """

    nmse: float
    mse: float
    variance: float
    iterations: int
    final_objective: float
    converged: bool
    reason: str = "max-iter"
    objective_trace: tuple = ()
    notes: tuple = ()
    dropped_samples: int = 0

    def __post_init__(self):
        if self.reason not in CONVERGENCE_REASONS:
            raise ValueError(f"unknown convergence reason {self.reason!r}")
        for name in ("nmse", "mse", "variance", "final_objective"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.variance > 0:
            expected = self.mse / self.variance
            if abs(self.nmse - expected) > 1e-9 * max(1.0, expected):
                raise ValueError("nmse must equal mse / variance")

    @classmethod
    def from_errors(cls, mse, variance, **kw):
        nmse = mse / variance if variance > 0 else 0.0
        return cls(nmse=nmse, mse=mse, variance=variance, **kw)


@dataclass(frozen=True)
class RbfModel:
    """Gaussian radial basis model: centers (dim_x, G), a shared squared
    length-scale ``width`` and output weights (dim_out, G)."""

    centers: np.ndarray
    width: float
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "centers", _freeze(np.atleast_2d(np.asarray(self.centers, float))))
        object.__setattr__(self, "weights", _freeze(np.atleast_2d(np.asarray(self.weights, float))))
        object.__setattr__(self, "width", float(self.width))
        if self.centers.shape[1] < 1:
            raise ValueError("need at least one basis center")
        if not self.width > 0:
            raise ValueError("width must be > 0")
        if not np.isfinite(self.centers).all() or not np.isfinite(self.weights).all():
            raise ValueError("centers and weights must be finite")
        if self.weights.shape[1] != self.centers.shape[1]:
            raise ValueError("weights columns must match number of centers")

    @property
    def dim_x(self):
        return self.centers.shape[0]

    @property
    def n_basis(self):
        return self.centers.shape[1]

    @property
    def dim_out(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class DemonstrationSet:
    """Column-per-sample demonstration data.

    states      (dim_x, N)
    actions     (dim_u, N)
    group_ids   (N,) integers in [0, K), marking which constraint
                condition produced each sample
    policy / task_component / null_component are optional ground-truth
    channels of shape (dim_u, N).
    """

    states: np.ndarray
    actions: np.ndarray
    group_ids: np.ndarray = None
    policy: np.ndarray = None
    task_component: np.ndarray = None
    null_component: np.ndarray = None

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, float))
        actions = np.atleast_2d(np.asarray(self.actions, float))
        n = states.shape[1]
        if n < 1:
            raise ValueError("dataset needs at least one sample")
        if actions.shape[1] != n:
            raise ValueError("states and actions disagree on sample count")
        gid = self.group_ids
        gid = np.zeros(n, dtype=int) if gid is None else np.asarray(gid, dtype=int)
        if gid.shape != (n,):
            raise ValueError("group_ids must have one entry per sample")
        if gid.min(initial=0) < 0:
            raise ValueError("group ids must be non-negative")
        k = int(gid.max(initial=0)) + 1
        present = np.unique(gid)
        if len(present) != k:
            raise ValueError("group ids must be dense: every id in [0, K) used")
        object.__setattr__(self, "states", _freeze(states))
        object.__setattr__(self, "actions", _freeze(actions))
        object.__setattr__(self, "group_ids", _freeze(gid))
        for name in ("policy", "task_component", "null_component"):
            ch = getattr(self, name)
            if ch is None:
                continue
            ch = np.atleast_2d(np.asarray(ch, float))
            if ch.shape != actions.shape:
                raise ValueError(f"{name} channel must match actions shape")
            object.__setattr__(self, name, _freeze(ch))
        for name in ("states", "actions", "policy", "task_component", "null_component"):
            ch = getattr(self, name)
            if ch is not None and not np.isfinite(ch).all():
                raise ValueError(f"non-finite entries in {name}")

    @property
    def dim_x(self):
        return self.states.shape[0]

    @property
    def dim_u(self):
        return self.actions.shape[0]

    @property
    def n_samples(self):
        return self.states.shape[1]

    @property
    def n_groups(self):
        return int(self.group_ids.max()) + 1

    def group_indices(self, k):
        return np.flatnonzero(self.group_ids == k)

    def subset(self, idx):
        """New dataset restricted to the given sample indices (group ids
        are re-densified)."""
        idx = np.asarray(idx, dtype=int)
        gid = self.group_ids[idx]
        _, dense = np.unique(gid, return_inverse=True)
        pick = lambda ch: None if ch is None else ch[:, idx]
        return DemonstrationSet(
            states=self.states[:, idx],
            actions=self.actions[:, idx],
            group_ids=dense,
            policy=pick(self.policy),
            task_component=pick(self.task_component),
            null_component=pick(self.null_component),
        )

    def split(self, train_fraction, seed=0):
        """Shuffled train/held-out split, stratified per group."""
        rng = np.random.default_rng(seed)
        train, hold = [], []
        for k in range(self.n_groups):
            idx = self.group_indices(k)
            idx = idx[rng.permutation(len(idx))]
            cut = max(1, int(round(train_fraction * len(idx))))
            train.extend(idx[:cut])
            hold.extend(idx[cut:])
        return self.subset(np.sort(train)), self.subset(np.sort(hold))


# ---------------------------------------------------------------------------
# dataset text format
#
# One sample per row, comma separated, with a header naming the columns:
# x1..x{dim_x}, u1..u{dim_u}, optional pi*/v*/w* ground-truth channels and
# an optional trailing integer group column k.
# ---------------------------------------------------------------------------

def _header_block(names, prefix):
    got = [n for n in names if n.startswith(prefix) and n[len(prefix):].isdigit()]
    expect = [f"{prefix}{i + 1}" for i in range(len(got))]
    if got != expect:
        raise ValueError(f"malformed header: expected contiguous {prefix}1..{prefix}N columns")
    return len(got)


def save_dataset(data: DemonstrationSet, path):
    cols = [f"x{i+1}" for i in range(data.dim_x)] + [f"u{i+1}" for i in range(data.dim_u)]
    channels = [data.states, data.actions]
    for ch, prefix in ((data.policy, "pi"), (data.task_component, "v"), (data.null_component, "w")):
        if ch is not None:
            cols += [f"{prefix}{i+1}" for i in range(ch.shape[0])]
            channels.append(ch)
    cols.append("k")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        stacked = np.vstack(channels)
        for n in range(data.n_samples):
            row = [repr(float(v)) for v in stacked[:, n]]
            row.append(str(int(data.group_ids[n])))
            fh.write(",".join(row) + "\n")


def load_dataset(path, dims=None) -> DemonstrationSet:
    """Read a dataset file, validating dimensions and values.

    dims, when given, is a (dim_x, dim_u) pair checked against the header.
    Rows with non-numeric tokens, wrong column counts or non-finite values
    are rejected with the offending file line named.  Group ids are
    remapped onto a dense [0, K) range; a missing group column means a
    single group.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    names = [c.strip() for c in lines[0].split(",")]
    dim_x = _header_block(names, "x")
    dim_u = _header_block(names, "u")
    dim_pi = _header_block(names, "pi")
    dim_v = _header_block(names, "v")
    dim_w = _header_block(names, "w")
    has_k = names[-1] == "k"
    expected = dim_x + dim_u + dim_pi + dim_v + dim_w + (1 if has_k else 0)
    if dim_x == 0 or dim_u == 0:
        raise ValueError("header must declare x* and u* columns")
    canonical = ([f"x{i+1}" for i in range(dim_x)] + [f"u{i+1}" for i in range(dim_u)]
                 + [f"pi{i+1}" for i in range(dim_pi)] + [f"v{i+1}" for i in range(dim_v)]
                 + [f"w{i+1}" for i in range(dim_w)] + (["k"] if has_k else []))
    if names != canonical:
        raise ValueError(f"unrecognized or out-of-order columns in header: {names}")
    for d, got in (("pi", dim_pi), ("v", dim_v), ("w", dim_w)):
        if got and got != dim_u:
            raise ValueError(f"{d}* channel must have dim_u={dim_u} columns, got {got}")
    if dims is not None and (dim_x, dim_u) != tuple(dims):
        raise ValueError(f"declared dims {tuple(dims)} do not match file dims {(dim_x, dim_u)}")

    rows, gids = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        tokens = line.split(",")
        if len(tokens) != expected:
            raise ValueError(f"{path} line {lineno}: expected {expected} columns, got {len(tokens)}")
        numeric = tokens[:-1] if has_k else tokens
        try:
            values = [float(t) for t in numeric]
        except ValueError:
            raise ValueError(f"{path} line {lineno}: non-numeric token") from None
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{path} line {lineno}: non-finite value")
        if has_k:
            tok = tokens[-1].strip()
            try:
                gids.append(int(tok))
            except ValueError:
                raise ValueError(f"{path} line {lineno}: group id {tok!r} is not an integer") from None
        rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=float).T
    ofs = 0

    def take(d):
        nonlocal ofs
        block = table[ofs:ofs + d] if d else None
        ofs += d
        return block

    states, actions = take(dim_x), take(dim_u)
    policy, task_c, null_c = take(dim_pi), take(dim_v), take(dim_w)
    if has_k:
        raw = np.asarray(gids, dtype=int)
        _, dense = np.unique(raw, return_inverse=True)
    else:
        dense = np.zeros(table.shape[1], dtype=int)
    return DemonstrationSet(states=states, actions=actions, group_ids=dense,
                            policy=policy, task_component=task_c, null_component=null_c)
