"""``cup`` command line: train, audit-bounds, eval, gen-gridworld, oracle."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .audit import audit_bounds
from .cmdp import SoftmaxPolicy, atomic_write_text, evaluate_policy, load_model, objective, save_model
from .envs import GridworldSpec, build_gridworld, deterministic_feasible_oracle
from .errors import CupError, NumericalError
from .experiment import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    Experiment,
    apply_overrides,
    execute,
    load_experiment,
    read_json,
)
from .lambda_returns import lambda_dynamics
from .optimizer import CupConfig

EXIT_AUDIT_FAILED = 1


def _sizes(text: str) -> list[tuple[int, int]]:
    out = []
    for part in text.split(","):
        try:
            s, a = part.lower().split("x")
            out.append((int(s), int(a)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"sizes must look like 3x2,5x3; got {part!r}")
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write_text(path, text)


def _load_theta(path, model):
    if path is None:
        return SoftmaxPolicy.uniform(model.n_states, model.n_actions)
    data = read_json(path)
    theta = data["theta"] if isinstance(data, dict) else data
    return SoftmaxPolicy(np.asarray(theta, dtype=float))


def cmd_train(args) -> int:
    data = read_json(args.config)
    if "cup" in data:
        exp = load_experiment(args.config)
        if args.model:
            exp = Experiment(load_model(args.model), exp.config, exp.iters, exp.seed)
    else:
        if not args.model:
            print("error: --model is required when --config holds only CUP settings", file=sys.stderr)
            return EXIT_CONFIG
        exp = Experiment(load_model(args.model), CupConfig.from_dict(data), 0, 0)
    overrides = {k: v for k, v in (("episodes", args.episodes), ("horizon", args.horizon)) if v is not None}
    exp = apply_overrides(exp, args.seed, args.iters, overrides)
    summary = execute(exp, args.out, args.emit_plot_data)
    print(f"final J={summary['final_j_reward']:.6f} J^c={summary['final_j_cost']:.6f} "
          f"feasible={summary['feasible']}")
    return EXIT_OK


def cmd_audit(args) -> int:
    rep = audit_bounds(args.seed, args.draws, args.sizes, args.lambdas, keep_reports=args.out is not None)
    summary = rep.summary()
    if args.out is not None:
        _write_json(args.out, {"summary": summary, "reports": [r.to_dict() for r in rep.reports]})
    print(json.dumps(summary, indent=2))
    return EXIT_OK if rep.passed else EXIT_AUDIT_FAILED


def cmd_eval(args) -> int:
    model = load_model(args.model)
    pi = _load_theta(args.policy, model)
    out = {
        "j_reward": objective(model, pi, "reward"),
        "j_cost": objective(model, pi, "cost"),
        "v": evaluate_policy(model, pi, "reward").v.tolist(),
        "v_cost": evaluate_policy(model, pi, "cost").v.tolist(),
    }
    if args.dump_dynamics:
        out["dynamics"] = lambda_dynamics(model, pi, args.lam).to_dict()
    _write_json(args.out, out)
    return EXIT_OK


def cmd_gen_gridworld(args) -> int:
    spec = GridworldSpec.from_dict(read_json(args.spec))
    model = build_gridworld(spec)
    if args.out in (None, "-"):
        sys.stdout.write(json.dumps(model.to_dict()) + "\n")
    else:
        save_model(model, args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    model = load_model(args.model)
    if args.b is not None:
        model = model.with_cost_limit(args.b)
    res = deterministic_feasible_oracle(model)
    _write_json(args.out, {
        "best_feasible_return": res.best_return,
        "best_feasible_cost": res.best_cost,
        "policy_table": None if res.policy_table is None else res.policy_table.tolist(),
        "n_policies": res.n_policies,
        "n_feasible": res.n_feasible,
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cup", description="Constrained Update Projection on finite CMDPs.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run CUP and write run.csv + summary.json")
    t.add_argument("--config", required=True, help="experiment JSON, or CUP settings JSON used with --model")
    t.add_argument("--model", help="model JSON (overrides the experiment's model)")
    t.add_argument("--iters", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--episodes", type=int, help="episodes per iteration (sampled mode)")
    t.add_argument("--horizon", type=int, help="episode length (sampled mode)")
    t.add_argument("--out", default=".", help="output directory or path of run.csv")
    t.add_argument("--emit-plot-data", action="store_true", help="also write tidy plot_data.csv")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("audit-bounds", help="randomized audit of the performance-difference bounds")
    a.add_argument("--seed", type=int, default=42)
    a.add_argument("--draws", type=int, default=500)
    a.add_argument("--sizes", type=_sizes, default=[(3, 2), (5, 3), (8, 3)])
    a.add_argument("--lambdas", type=_floats, default=[0.0, 0.5, 0.95])
    a.add_argument("--out", help="report JSON (summary plus every BoundReport)")
    a.set_defaults(func=cmd_audit)

    e = sub.add_parser("eval", help="exact evaluation of a policy")
    e.add_argument("--model", required=True)
    e.add_argument("--policy", help="JSON with 'theta' logits; uniform policy if omitted")
    e.add_argument("--lambda", dest="lam", type=float, default=0.95)
    e.add_argument("--dump-dynamics", action="store_true", help="include P^lam, r^lam, d^lam")
    e.add_argument("--seed", type=int, default=0, help="unused; accepted for interface uniformity")
    e.add_argument("--out", default="-")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gen-gridworld", help="build a gridworld model JSON from a spec JSON")
    g.add_argument("--spec", required=True)
    g.add_argument("--seed", type=int, default=0, help="unused; construction is deterministic")
    g.add_argument("--out", default="-")
    g.set_defaults(func=cmd_gen_gridworld)

    o = sub.add_parser("oracle", help="best deterministic feasible policy by enumeration")
    o.add_argument("--model", required=True)
    o.add_argument("--b", type=float, help="override the model's cost limit")
    o.add_argument("--seed", type=int, default=0, help="unused; enumeration is deterministic")
    o.add_argument("--out", default="-")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
