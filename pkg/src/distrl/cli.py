"""Command-line entry point: ``distrl <command> ...``.

Every command exits 0 when all of its checks pass and 1 otherwise; input
errors, including classes the data rule out, exit 2.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import harness, io, library
from .agents_rl import deterministic_policies
from .agents_cb import UnrealizableError
from .eluder import EluderGuardError, build_cb_instance, build_rl_instance, eluder_dim
from .func_class import ClampError

RUN_KINDS = {"run-cb": "cb", "run-online": "online-rl", "run-offline": "offline-rl"}


def _kv(text: str):
    key, _, raw = text.partition("=")
    if not key or not raw:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="scenario JSON file")
    src.add_argument("--builtin", choices=sorted(library.BUILTINS), help="built-in instance")
    p.add_argument("--arg", type=_kv, action="append", default=[], metavar="KEY=VALUE",
                   help="argument for the built-in instance (repeatable)")
    p.add_argument("--set", type=_kv, action="append", default=[], metavar="KEY=VALUE",
                   help="override a run config field such as K, N, beta, delta (repeatable)")
    p.add_argument("--seeds", type=int, help="number of seeds (overrides the scenario)")
    p.add_argument("--master-seed", type=int, help="master seed (overrides the scenario)")
    p.add_argument("--out", help="output directory (default: $DISTRL_OUTPUT_DIR or ./distrl_out)")


def _scenario(args, kind: str) -> harness.Scenario:
    if args.scenario:
        scn = harness.load_scenario(args.scenario)
        if scn.kind != kind:
            raise ValueError(f"scenario type is {scn.kind!r}, this command runs {kind!r}")
        scn.config.update(dict(args.set))
        if args.seeds is not None:
            scn.seeds = list(range(args.seeds))
        if args.master_seed is not None:
            scn.master_seed = args.master_seed
        return scn
    return harness.builtin_scenario(args.builtin, kind, seeds=10 if args.seeds is None else args.seeds,
                                    args=dict(args.arg), config=dict(args.set),
                                    master_seed=args.master_seed or 0)


def _print_report(rep: harness.SweepReport) -> None:
    for value, agg in rep.aggregates.items():
        head = "" if value == "None" else f"[{value}] "
        print(head + "  ".join(f"{k}={v}" for k, v in agg.items()))
    for name, ok in rep.checks.items():
        print(f"check {name}: {'PASS' if ok else 'FAIL'}")
    base = rep.details.get("baseline")
    if base:
        print(f"baseline best multiplier {base['best_multiplier']}: median regret {base['median_regret']}")


def cmd_run(args) -> int:
    scn = _scenario(args, RUN_KINDS[args.command])
    out = io.output_dir(args.out)
    rep = harness.run_scenario(scn, out)
    _print_report(rep)
    print(f"wrote {out / scn.name}")
    return 0 if rep.passed else 1


def cmd_report(args) -> int:
    kind = args.type or (harness.BUILTIN_KIND.get(args.builtin) if args.builtin else None)
    if args.scenario:
        kind = io.read_json(args.scenario).get("type")
    scn = _scenario(args, kind)
    out = io.output_dir(args.out)
    rep = harness.run_scenario(scn, out)
    bounds = harness.report_bounds(scn, rep, d=args.d)
    print(harness.format_bounds(bounds))
    io.write_json(out / scn.name / "bounds.json", bounds)
    return 0 if rep.passed else 1


def cmd_eluder(args) -> int:
    if args.builtin:
        built = library.BUILTINS[args.builtin](**dict(args.arg))
        env, cls = built[0], built[1]
    else:
        if not (args.env and args.cls):
            raise ValueError("give --builtin or both --env and --class")
        obj = io.read_json(args.env)
        env = io.cb_from_dict(obj) if obj.get("kind") == "cb" else io.mdp_from_dict(obj)
        cls = io.load_class(args.cls)
    kw = {"epsilon0": args.epsilon0, "K": args.K}
    if cls.horizon == 1 and args.mode == "cb":
        inst = build_cb_instance(cls, env.C, **kw)
    else:
        mdp = env.as_mdp() if hasattr(env, "as_mdp") else env
        pols = deterministic_policies(mdp.horizon, mdp.n_states, mdp.n_actions)
        inst = build_rl_instance(cls, mdp, pols, args.step, "V" if args.mode == "V" else "Q", **kw)
    res = eluder_dim(inst)
    print(f"dimension {res.dimension}")
    print(f"epsilon {res.epsilon!r}")
    for t, (i, j) in enumerate(res.sequence):
        print(f"  {t}: distribution {i} witness {j}")
    return 0


def cmd_check_lemmas(args) -> int:
    rows = harness.check_lemmas(args.count, args.seed, args.rl_count)
    for r in rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['check']:<32} cases={r['cases']:<7} "
              f"worst_slack={r['worst_slack']:.3e}")
    if args.out:
        io.write_json(io.output_dir(args.out) / "check_lemmas.json", {"rows": rows})
    return 0 if all(r["passed"] for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distrl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in RUN_KINDS.items():
        p = sub.add_parser(name, help=f"seeded {kind} sweep with checks")
        _add_source(p)
        p.set_defaults(func=cmd_run)
    p = sub.add_parser("report", help="run a scenario and compare against the theorem shapes")
    _add_source(p)
    p.add_argument("--type", choices=harness.KINDS, help="run type for a built-in instance")
    p.add_argument("--d", type=float, help="eluder dimension to use (computed for small CB classes)")
    p.set_defaults(func=cmd_report)
    p = sub.add_parser("eluder", help="exact eluder dimension of a small instance")
    p.add_argument("--builtin", choices=sorted(library.BUILTINS))
    p.add_argument("--arg", type=_kv, action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--env", help="CB or MDP JSON file")
    p.add_argument("--class", dest="cls", help="class JSON file")
    p.add_argument("--mode", choices=("cb", "Q", "V"), default="cb")
    p.add_argument("--step", type=int, default=0, help="step h for RL instances")
    p.add_argument("--epsilon0", type=float)
    p.add_argument("--K", type=int, help="sets epsilon0 = 1/K when --epsilon0 is absent")
    p.set_defaults(func=cmd_eluder)
    p = sub.add_parser("check-lemmas", help="random sweep over the distributional inequalities")
    p.add_argument("--count", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rl-count", type=int, help="random RL triples (default count/10)")
    p.add_argument("--out", help="write check_lemmas.json here")
    p.set_defaults(func=cmd_check_lemmas)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, TypeError, UnrealizableError, ClampError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
