"""Command-line pipeline: generate data, learn models, evaluate metrics,
and run the bundled end-to-end tutorials.

Every run writes a JSON manifest next to its outputs recording the
resolved command (sufficient to re-run it), the seed, wall-clock duration
and a summary of the learning report.  All artifact outputs are
deterministic for a fixed --seed; the environment variable CCL_SEED
overrides the default seed.

Exit codes: 0 success, 1 input or validation error, 2 learning finished
without convergence (best-effort model still written).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from .constraint import (
    StateDependentConstraintModel,
    StateIndependentConstraint,
    feature_provider_from_name,
    learn_alpha,
    learn_lambda,
    learn_nhat,
)
from .core import DemonstrationSet, LearnOptions, load_dataset, save_dataset
from .datagen import GeneratorConfig, generate, policy_limit_cycle, policy_linear, true_projectors
from .metrics import error_ncpe, error_npe, error_nupe, error_poe, error_ppe
from .nullspace import NullspaceComponentModel, learn_ncl, make_ncl_model
from .policy import LwlPolicyModel, ParametricPolicyModel, learn_pi, learn_pi_lwl, lwl_policy_model, rbf_policy_model
from .serialize import load_model, save_model

METHODS = ("nhat", "alpha", "lambda", "ncl", "pi", "pi-lwl")
TUTORIALS = ("toy-ncl", "toy-constraint", "toy-pi", "twolink")


class CliError(Exception):
    """Input or usage problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class RunManifest:
    """Record of one CLI run, written next to its outputs."""

    subcommand: str
    command: tuple
    config: dict
    inputs: tuple
    outputs: tuple
    seed: int
    duration_s: float
    report: dict = None

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True, default=list)
            fh.write("\n")


def _default_seed():
    return int(os.environ.get("CCL_SEED", "0"))


def _report_summary(report):
    return {
        "converged": report.converged, "reason": report.reason,
        "iterations": report.iterations,
        "final_objective": report.final_objective,
        "nmse": report.nmse, "mse": report.mse, "variance": report.variance,
        "notes": list(report.notes), "dropped_samples": report.dropped_samples,
    }


def _manifest_path(out_path):
    return f"{out_path}.manifest.json"


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def _parse_constraint(text):
    kind, _, arg = text.partition(":")
    if kind == "none":
        return ("none",)
    if kind == "fixed":
        return ("fixed-angle", float(arg))
    if kind == "parabolic":
        return ("parabolic", float(arg))
    if kind == "jrows":
        return ("jacobian-rows", tuple(int(v) for v in arg.split(",")))
    raise CliError(f"unknown constraint spec {text!r} "
                   "(use none | fixed:DEG | parabolic:A | jrows:I[,J])")


def _parse_task_b(text):
    kind, _, arg = text.partition(":")
    if kind == "zero":
        return ("zero",)
    if kind == "const":
        return ("constant", tuple(float(v) for v in arg.split(",")))
    if kind == "sin":
        amp, cycles, phase = (float(v) for v in arg.split(","))
        return ("sinusoid", amp, cycles, phase)
    raise CliError(f"unknown task spec {text!r} (use zero | const:V[,V] | sin:AMP,CYCLES,PHASE)")


def _gen_config(args):
    return GeneratorConfig(
        system=args.system, policy=args.policy,
        constraints=tuple(_parse_constraint(c) for c in args.constraint),
        task_b=_parse_task_b(args.b), n_per_group=args.n,
        noise_std=args.noise, rng_seed=args.seed)


def cmd_gen(args):
    config = _gen_config(args)
    t0 = time.perf_counter()
    data = generate(config)
    save_dataset(data, args.out)
    command = ["gen", "--system", args.system, "--policy", args.policy]
    for c in args.constraint:
        command += ["--constraint", c]
    command += ["--b", args.b, "--n", str(args.n), "--noise", repr(args.noise),
                "--seed", str(args.seed), "--out", args.out]
    RunManifest(subcommand="gen", command=tuple(command), config=asdict(config),
                inputs=(), outputs=(args.out,), seed=args.seed,
                duration_s=time.perf_counter() - t0).write(_manifest_path(args.out))
    print(f"gen: wrote {data.n_samples} samples ({data.n_groups} groups) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# learn
# ---------------------------------------------------------------------------

def _options_from_args(args):
    return LearnOptions(
        tol_fun=args.tol_fun, tol_x=args.tol_x, max_iter=args.max_iter,
        search_resolution=args.search_resolution, num_restarts=args.num_restarts,
        svd_threshold=args.svd_threshold, regularization=args.regularization,
        rng_seed=args.seed)


def _dispatch_learn(args, data, opts):
    num_basis = args.num_basis
    if args.method == "nhat":
        return learn_nhat(data.actions, opts)
    if args.method == "alpha":
        return learn_alpha(data.actions, data.states, opts,
                           num_basis=num_basis or 16, dim_b=args.dim_b)
    if args.method == "lambda":
        if not args.features:
            raise CliError("method lambda needs --features "
                           "(e.g. twolink-jacobian:1.0,1.0 or identity:2)")
        provider = feature_provider_from_name(args.features)
        return learn_lambda(data.actions, data.states, provider, opts,
                            num_basis=num_basis or 16, dim_b=args.dim_b)
    if args.method == "ncl":
        model0 = make_ncl_model(data.states, data.dim_u,
                                num_basis=num_basis or 16, seed=args.seed)
        return learn_ncl(data.states, data.actions, model0, opts)
    if args.method == "pi":
        if args.basis == "linear":
            from .policy import linear_policy_model
            model0 = linear_policy_model(data.dim_x, data.dim_u)
        else:
            model0 = rbf_policy_model(data.states, data.dim_u,
                                      num_basis=num_basis or 10, seed=args.seed)
        return learn_pi(data.states, data.actions, model0, opts)
    if args.method == "pi-lwl":
        model0 = lwl_policy_model(data.states, data.dim_u,
                                  num_local=num_basis or 10, seed=args.seed)
        return learn_pi_lwl(data.states, data.actions, model0, opts)
    raise CliError(f"unknown method {args.method!r}")


def cmd_learn(args):
    t0 = time.perf_counter()
    data = load_dataset(args.inp)
    opts = _options_from_args(args)
    model, report = _dispatch_learn(args, data, opts)
    save_model(model, args.out)

    notes = list(report.notes)
    if args.method in ("pi", "pi-lwl") and data.n_groups == 1:
        notes.append("degeneracy-warning: all samples share one constraint group; "
                     "the policy is only pinned down along observed directions")
    summary = _report_summary(report)
    summary["notes"] = notes
    command = ["learn", "--method", args.method, "--in", args.inp, "--out", args.out,
               "--seed", str(args.seed)]
    if args.num_basis:
        command += ["--num-basis", str(args.num_basis)]
    if args.dim_b is not None:
        command += ["--dim-b", str(args.dim_b)]
    if args.features:
        command += ["--features", args.features]
    if args.basis != "rbf":
        command += ["--basis", args.basis]
    RunManifest(subcommand="learn", command=tuple(command),
                config={"method": args.method, "options": asdict(opts),
                        "num_basis": args.num_basis, "dim_b": args.dim_b,
                        "features": args.features, "basis": args.basis},
                inputs=(args.inp,), outputs=(args.out,), seed=args.seed,
                duration_s=time.perf_counter() - t0,
                report=summary).write(_manifest_path(args.out))
    print(f"learn: method={args.method} converged={report.converged} "
          f"reason={report.reason} iterations={report.iterations} "
          f"objective={report.final_objective:.6g} nmse={report.nmse:.6g}")
    return 0 if report.converged else 2


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _action_direction_projectors(u):
    norms = (u ** 2).sum(axis=0)
    keep = norms > 1e-12
    proj = np.zeros((u.shape[0], u.shape[0], u.shape[1]))
    proj[:, :, keep] = np.einsum("in,jn->ijn", u[:, keep], u[:, keep]) / norms[keep]
    return proj


def compute_metrics(model, data: DemonstrationSet):
    """All metrics applicable to a (model, dataset) pair.

    Returns (rows, skipped): rows are (name, MetricTriple), skipped are
    (name, why) notes for metrics whose ground-truth channels are absent.
    """
    rows, skipped = [], []
    if isinstance(model, (StateIndependentConstraint, StateDependentConstraintModel)):
        if isinstance(model, StateIndependentConstraint):
            projectors = model.projector_stack(data.states)
        else:
            projectors = model.projector_stack(data.states)
        rows.append(("NPOE", error_poe(data.actions, projectors)))
        if data.policy is not None and data.null_component is not None:
            rows.append(("NPPE", error_ppe(data.null_component, projectors, data.policy)))
        else:
            skipped.append(("NPPE", "requires ground truth (pi and w channels)"))
    elif isinstance(model, NullspaceComponentModel):
        if data.null_component is not None:
            pred = model.predict(data.states)
            rows.append(("NUPE", error_nupe(data.null_component, pred)))
            rows.append(("NPE", error_npe(data.null_component, pred)))
        else:
            skipped.append(("NPE", "requires ground truth (w channel)"))
            skipped.append(("NUPE", "requires ground truth (w channel)"))
    elif isinstance(model, (ParametricPolicyModel, LwlPolicyModel)):
        pred = model.predict(data.states)
        if data.policy is not None:
            rows.append(("NUPE", error_nupe(data.policy, pred)))
            rows.append(("NCPE", error_ncpe(data.policy, pred,
                                            _action_direction_projectors(data.actions))))
        else:
            skipped.append(("NUPE", "requires ground truth (pi channel)"))
            skipped.append(("NCPE", "requires ground truth (pi channel)"))
    else:
        raise CliError(f"cannot evaluate model of type {type(model).__name__}")
    return rows, skipped


def _metric_table(rows, skipped):
    lines = ["metric,normalized,variance,mse"]
    for name, triple in rows:
        lines.append(f"{name},{triple.normalized!r},{triple.variance!r},{triple.mse!r}")
    for name, why in skipped:
        lines.append(f"# {name} skipped: {why}")
    return "\n".join(lines) + "\n"


def cmd_eval(args):
    t0 = time.perf_counter()
    model = load_model(args.model)
    data = load_dataset(args.data)
    rows, skipped = compute_metrics(model, data)
    table = _metric_table(rows, skipped)
    sys.stdout.write(table)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table)
        structured = {
            "metrics": {name: {"normalized": t.normalized, "variance": t.variance,
                               "mse": t.mse} for name, t in rows},
            "skipped": dict(skipped),
        }
        RunManifest(subcommand="eval",
                    command=("eval", "--model", args.model, "--data", args.data,
                             "--out", args.out),
                    config={}, inputs=(args.model, args.data), outputs=(args.out,),
                    seed=_default_seed(), duration_s=time.perf_counter() - t0,
                    report=structured).write(_manifest_path(args.out))
    return 0


# ---------------------------------------------------------------------------
# tutorials
# ---------------------------------------------------------------------------

def _grid_states(low, high, per_axis=15):
    ax = [np.linspace(low[i], high[i], per_axis) for i in range(2)]
    g = np.meshgrid(*ax, indexing="ij")
    return np.vstack([v.ravel() for v in g])


def _write_projector_field(path, config, model, per_axis=15):
    low, high = ((config.joint_low, config.joint_high) if config.system == "twolink"
                 else (config.state_low, config.state_high))
    xs = _grid_states(low, high, per_axis)
    dummy = DemonstrationSet(states=xs, actions=np.zeros_like(xs),
                             group_ids=np.zeros(xs.shape[1], dtype=int))
    truth = true_projectors(config, dummy)
    learned = model.projector_stack(xs)
    with open(path, "w") as fh:
        names = [f"{tag}_n{i+1}{j+1}" for tag in ("true", "learned")
                 for i in range(2) for j in range(2)]
        fh.write("x1,x2," + ",".join(names) + "\n")
        for n in range(xs.shape[1]):
            vals = [xs[0, n], xs[1, n]]
            vals += [truth[i, j, n] for i in range(2) for j in range(2)]
            vals += [learned[i, j, n] for i in range(2) for j in range(2)]
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")


def _write_vector_field(path, config, predict, per_axis=15):
    xs = _grid_states(config.state_low, config.state_high, per_axis)
    if config.policy == "limit-cycle":
        truth = policy_limit_cycle(xs, config.cycle_radius, config.cycle_gain,
                                   config.cycle_rate)
    else:
        truth = policy_linear(xs, config.attractor_gain, config.attractor_target)
    pred = predict(xs)
    with open(path, "w") as fh:
        fh.write("x1,x2,true_1,true_2,pred_1,pred_2\n")
        for n in range(xs.shape[1]):
            vals = (xs[0, n], xs[1, n], truth[0, n], truth[1, n], pred[0, n], pred[1, n])
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")


def _tutorial_stage(outdir, stem, config, method, seed, num_basis,
                    features=None, basis="rbf"):
    """gen -> learn -> eval with shared file naming; returns eval table."""
    data_path = os.path.join(outdir, f"{stem}_data.csv")
    model_path = os.path.join(outdir, f"{stem}_model.json")
    metrics_path = os.path.join(outdir, f"{stem}_metrics.csv")

    gen_args = argparse.Namespace(system=config.system, policy=config.policy,
                                  constraint=[_constraint_text(c) for c in config.constraints],
                                  b=_task_text(config.task_b), n=config.n_per_group,
                                  noise=config.noise_std, seed=seed, out=data_path)
    cmd_gen(gen_args)
    learn_args = _learn_namespace(method=method, inp=data_path, out=model_path,
                                  seed=seed, num_basis=num_basis,
                                  features=features, basis=basis)
    code = cmd_learn(learn_args)
    eval_args = argparse.Namespace(model=model_path, data=data_path, out=metrics_path)
    cmd_eval(eval_args)
    return load_model(model_path), code


def _constraint_text(spec):
    kind = spec[0]
    if kind == "none":
        return "none"
    if kind == "fixed-angle":
        return f"fixed:{spec[1]}"
    if kind == "parabolic":
        return f"parabolic:{spec[1]}"
    return "jrows:" + ",".join(str(v) for v in spec[1])


def _task_text(task_b):
    if task_b[0] == "zero":
        return "zero"
    if task_b[0] == "constant":
        return "const:" + ",".join(repr(float(v)) for v in task_b[1])
    return f"sin:{task_b[1]},{task_b[2]},{task_b[3]}"


def _learn_namespace(**kw):
    defaults = dict(method=None, inp=None, out=None, seed=0, num_basis=None,
                    dim_b=None, features=None, basis="rbf",
                    tol_fun=1e-9, tol_x=1e-9, max_iter=1000, search_resolution=90,
                    num_restarts=5, svd_threshold=1e-8, regularization=1e-8)
    defaults.update(kw)
    return argparse.Namespace(**defaults)


def cmd_tutorial(args):
    outdir = args.outdir or f"ccl-tutorial-{args.name}"
    os.makedirs(outdir, exist_ok=True)
    seed = args.seed
    code = 0

    if args.name == "toy-ncl":
        config = GeneratorConfig(constraints=(("fixed-angle", 60.0),),
                                 task_b=("sinusoid", 0.5, 3.0, 0.0),
                                 n_per_group=500, rng_seed=seed)
        model, code = _tutorial_stage(outdir, "ncl", config, "ncl", seed, 16)
        _write_vector_field(os.path.join(outdir, "ncl_field.csv"), config, model.predict)

    elif args.name == "toy-constraint":
        config = GeneratorConfig(constraints=(("fixed-angle", 30.0),),
                                 n_per_group=500, rng_seed=seed)
        model, c1 = _tutorial_stage(outdir, "linear", config, "nhat", seed, None)
        _write_projector_field(os.path.join(outdir, "linear_projector_field.csv"),
                               config, model)
        config_p = GeneratorConfig(constraints=(("parabolic", 0.1),),
                                   n_per_group=500, rng_seed=seed)
        model_p, c2 = _tutorial_stage(outdir, "parabolic", config_p, "alpha", seed, 16)
        _write_projector_field(os.path.join(outdir, "parabolic_projector_field.csv"),
                               config_p, model_p)
        code = max(c1, c2)

    elif args.name == "toy-pi":
        config = GeneratorConfig(constraints=(("fixed-angle", 0.0),
                                              ("fixed-angle", 60.0),
                                              ("fixed-angle", 120.0)),
                                 n_per_group=200, rng_seed=seed)
        model, code = _tutorial_stage(outdir, "pi", config, "pi", seed, 10)
        _write_vector_field(os.path.join(outdir, "pi_field.csv"), config, model.predict)

    elif args.name == "twolink":
        config = GeneratorConfig(system="twolink", policy="linear-attractor",
                                 attractor_target=(0.8, 0.9),
                                 constraints=(("jacobian-rows", (1,)),),
                                 n_per_group=500, rng_seed=seed)
        model, code = _tutorial_stage(outdir, "twolink", config, "lambda", seed, 16,
                                      features="twolink-jacobian:1.0,1.0")
        _write_projector_field(os.path.join(outdir, "twolink_projector_field.csv"),
                               config, model)
    else:
        raise CliError(f"unknown tutorial {args.name!r}")
    print(f"tutorial {args.name}: outputs in {outdir}")
    return code


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="ccl", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--system", choices=("toy2d", "twolink"), default="toy2d")
    g.add_argument("--policy", choices=("limit-cycle", "linear-attractor"),
                   default="limit-cycle")
    g.add_argument("--constraint", action="append", required=True,
                   help="repeatable; none | fixed:DEG | parabolic:A | jrows:I[,J]")
    g.add_argument("--b", default="zero",
                   help="task drive: zero | const:V[,V] | sin:AMP,CYCLES,PHASE")
    g.add_argument("--n", type=int, default=500, help="samples per group")
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=_default_seed())
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    l = sub.add_parser("learn", help="fit a model to a dataset")
    l.add_argument("--method", choices=METHODS, required=True)
    l.add_argument("--in", dest="inp", required=True)
    l.add_argument("--out", required=True)
    l.add_argument("--num-basis", type=int, default=None,
                   help="basis functions / local models (default 16, policies 10)")
    l.add_argument("--dim-b", type=int, default=None,
                   help="fix the constraint row count (alpha/lambda)")
    l.add_argument("--features", default=None,
                   help="feature matrix for lambda, e.g. twolink-jacobian:1.0,1.0")
    l.add_argument("--basis", choices=("rbf", "linear"), default="rbf",
                   help="feature family for method pi")
    l.add_argument("--seed", type=int, default=_default_seed())
    l.add_argument("--tol-fun", type=float, default=1e-9)
    l.add_argument("--tol-x", type=float, default=1e-9)
    l.add_argument("--max-iter", type=int, default=1000)
    l.add_argument("--search-resolution", type=int, default=90)
    l.add_argument("--num-restarts", type=int, default=5)
    l.add_argument("--svd-threshold", type=float, default=1e-8)
    l.add_argument("--regularization", type=float, default=1e-8)
    l.set_defaults(func=cmd_learn)

    e = sub.add_parser("eval", help="evaluate a model against a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None, help="also write the metric table here")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("tutorial", help="run a bundled end-to-end scenario")
    t.add_argument("name", choices=TUTORIALS)
    t.add_argument("--seed", type=int, default=_default_seed())
    t.add_argument("--outdir", default=None)
    t.set_defaults(func=cmd_tutorial)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
