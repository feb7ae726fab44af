"""Scenarios, seeded sweeps, lemma checks and bound reports.

Every run draws from its own counter-based generator: Philox keyed by the
SHA-256 digest of ``"<master_seed>/<scenario name>/<seed>"``. Runs are
independent of each other and of execution order, so reruns reproduce the
CSV outputs byte for byte.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io, library
from .agents_cb import (BASELINE_MULTIPLIERS, CB_CSV_COLUMNS, CBRunConfig, auto_beta_cb, distucb_run,
                        episode_checks, gap_quantities, regcb_baseline_run, second_order_cb_shape)
from .agents_rl import (ONLINE_CSV_COLUMNS, OfflineRunConfig, OnlineRunConfig, bellman_completeness,
                        deterministic_policies, implied_constant, odisco_run, pdisco_run,
                        second_order_to_first_order)
from .dist import (INEQ_SLACK, hellinger_sandwich_slack, mean_gap_one_variance_slack, mean_gap_two_variance_slack,
                   variance_gap_slack)
from .eluder import EluderGuardError, build_cb_instance, eluder_dim
from .env import CBEnv, Policy, TabularMDP, sample_offline_dataset
from .func_class import FiniteClass
from .theory import (change_of_variance_slack, change_of_variance_top_slack, performance_difference,
                     total_variance)

KINDS = ("cb", "online-rl", "offline-rl")
DEFAULT_FREQ_SLACK = 0.05


def make_rng(master_seed: int, name: str, seed: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{master_seed}/{name}/{seed}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class Scenario:
    name: str
    kind: str
    env: CBEnv | TabularMDP
    cls: FiniteClass
    config: dict
    seeds: list[int]
    checks: list = field(default_factory=list)
    master_seed: int = 0
    policies: list[Policy] | None = None
    nu: np.ndarray | None = None
    comparator: int | None = None
    baseline: bool = False
    sweep: dict | None = None  # {"K": [...]} or {"N": [...]}
    freq_slack: float = DEFAULT_FREQ_SLACK
    d: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ValueError("seeds must be a nonempty list of distinct integers")
        if self.kind == "cb" and not isinstance(self.env, CBEnv):
            raise ValueError("cb scenarios need a CBEnv")
        if self.kind != "cb" and not isinstance(self.env, TabularMDP):
            raise ValueError("RL scenarios need a TabularMDP")
        if self.kind == "offline-rl":
            H, S, A = self.env.horizon, self.env.n_states, self.env.n_actions
            if self.policies is None:
                self.policies = deterministic_policies(H, S, A)
            if self.nu is None:
                self.nu = np.full((H, S, A), 1.0 / (S * A))
        if self.sweep is not None:
            if len(self.sweep) != 1 or next(iter(self.sweep)) not in ("K", "N"):
                raise ValueError("sweep must vary exactly one of K or N")


# -- scenario files -----------------------------------------------------------------

def _resolve(ref, base: Path, loader):
    if isinstance(ref, str):
        return loader(io.read_json(base / ref))
    return loader(ref)


def scenario_from_dict(obj: dict, base: Path | str = ".") -> Scenario:
    io._check(obj, "scenario")
    base = Path(base)
    kind = obj.get("type")
    if kind not in KINDS:
        raise io.SchemaError(f"scenario type must be one of {KINDS}, got {kind!r}")
    extra = {}
    inst = obj.get("instance")
    if inst is not None:
        if inst.get("builtin") not in library.BUILTINS:
            raise io.SchemaError(f"unknown builtin instance {inst.get('builtin')!r}")
        built = library.BUILTINS[inst["builtin"]](**inst.get("args", {}))
        env, cls = built[0], built[1]
        if len(built) == 4:
            extra = {"nu": built[2], "policies": built[3]}
    else:
        env_loader = io.cb_from_dict if kind == "cb" else io.mdp_from_dict
        env = _resolve(obj["env"], base, env_loader)
        cls = _resolve(obj["class"], base, io.class_from_dict)
    if "nu" in obj and obj["nu"] != "uniform":
        extra["nu"] = np.asarray(obj["nu"], dtype=float)
    if "policies" in obj:
        if obj["policies"] == "deterministic":
            extra["policies"] = deterministic_policies(env.horizon, env.n_states, env.n_actions)
        else:
            extra["policies"] = [Policy.deterministic(np.asarray(p), env.n_actions) for p in obj["policies"]]
    seeds = obj.get("seeds", 1)
    seeds = list(range(seeds)) if isinstance(seeds, int) else [int(s) for s in seeds]
    return Scenario(
        name=obj["name"], kind=kind, env=env, cls=cls, config=dict(obj.get("config", {})), seeds=seeds,
        checks=list(obj.get("checks", [])), master_seed=int(obj.get("master_seed", 0)),
        comparator=obj.get("comparator"), baseline=bool(obj.get("baseline", False)),
        sweep=obj.get("sweep"), freq_slack=float(obj.get("freq_slack", DEFAULT_FREQ_SLACK)),
        d=obj.get("d"), **extra,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    return scenario_from_dict(io.read_json(path), path.parent)


# -- sweeps -------------------------------------------------------------------------------

@dataclass
class SweepReport:
    name: str
    kind: str
    rows: list[dict]
    aggregates: dict
    checks: dict
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "rows": self.rows, "aggregates": self.aggregates,
                "checks": self.checks, "details": self.details, "passed": self.passed}


def _iqr(v) -> list[float]:
    q1, q3 = np.percentile(v, [25, 75])
    return [float(q1), float(q3)]


def aggregate(rows: list[dict], kind: str) -> dict:
    """Per-sweep-value medians and IQRs, recomputable from ``rows`` alone."""
    key = "suboptimality" if kind == "offline-rl" else "regret_cum"
    flag = "pessimism_all" if kind == "offline-rl" else "optimism_all"
    out = {}
    for value in sorted({r["sweep_value"] for r in rows}):
        sel = [r for r in rows if r["sweep_value"] == value]
        v = np.array([r[key] for r in sel])
        agg = {"n_seeds": len(sel), f"median_{key}": float(np.median(v)), f"iqr_{key}": _iqr(v),
               f"{flag}_frequency": float(np.mean([r[flag] for r in sel]))}
        for extra in ("sum_var", "sum_v_star", "var_comparator", "v_comparator"):
            if extra in sel[0]:
                agg[f"median_{extra}"] = float(np.median([r[extra] for r in sel]))
        out[str(value)] = agg
    return out


def _run_one(scn: Scenario, value, seed: int, out: Path | None):
    rng = make_rng(scn.master_seed, scn.name, seed)
    cfg = dict(scn.config)
    tag = f"seed{seed}" if value is None else f"{next(iter(scn.sweep))}{value}_seed{seed}"
    if value is not None:
        cfg[next(iter(scn.sweep))] = value
    if scn.kind == "cb":
        res = distucb_run(scn.env, scn.cls, CBRunConfig(**cfg), rng)
        row = dict(res.summary)
        row.update(episode_checks(scn.env, scn.cls, res))
        K = res.summary["config"]["K"]
        row["late_regret"] = float(sum(e.regret_inst for e in res.logs[K // 2:]))
        if out is not None:
            io.write_csv(out / f"{tag}.csv", CB_CSV_COLUMNS, res.rows())
        return row, res
    if scn.kind == "online-rl":
        res = odisco_run(scn.env, scn.cls, OnlineRunConfig(**cfg), rng)
        if out is not None:
            io.write_csv(out / f"{tag}.csv", ONLINE_CSV_COLUMNS, res.rows())
        return dict(res.summary), res
    ocfg = OfflineRunConfig(**cfg)
    data = sample_offline_dataset(scn.env, scn.nu, ocfg.N, rng)
    res = pdisco_run(scn.env, scn.cls, scn.policies, data, ocfg, nu=scn.nu, comparator=scn.comparator, rng=rng)
    if out is not None:
        io.write_csv(out / f"{tag}.csv", ("policy", "pessimistic_value", "pessimism_flag", "chosen"),
                     [(j, v, f, int(j == res.chosen))
                      for j, (v, f) in enumerate(zip(res.pessimistic_values, res.pessimism_flags))])
    return dict(res.summary), res


def _baseline(scn: Scenario, out: Path | None, main_results: dict) -> dict:
    """Squared-loss runs over the beta multipliers; the best median regret is reported."""
    cfg = dict(scn.config)
    K, delta = cfg["K"], cfg.get("delta", 0.1)
    base = auto_beta_cb(K, scn.cls.size(), delta)
    table = {}
    runs = {}
    for mult in BASELINE_MULTIPLIERS:
        regs = []
        for seed in scn.seeds:
            c = dict(cfg, beta=mult * base)
            r = regcb_baseline_run(scn.env, scn.cls, CBRunConfig(**c), make_rng(scn.master_seed, scn.name, seed))
            regs.append(r.summary["regret_cum"])
            runs[(mult, seed)] = r
        table[str(mult)] = float(np.median(regs))
    best = min(BASELINE_MULTIPLIERS, key=lambda m: (table[str(m)], m))
    if out is not None:
        for seed in scn.seeds:
            a = main_results[seed].regret_curve()
            b = runs[(best, seed)].regret_curve()
            io.write_csv(out / f"seed{seed}_baseline.csv", ("k", "regret_cum_distucb", "regret_cum_regcb"),
                         zip(range(len(a)), a, b))
    return {"multiplier_medians": table, "best_multiplier": best, "median_regret": table[str(best)],
            "per_seed_regret": [runs[(best, s)].summary["regret_cum"] for s in scn.seeds]}


def run_scenario(scn: Scenario, out_dir: Path | str | None = None) -> SweepReport:
    """Execute every ``(sweep value, seed)`` run, write per-run CSVs and the JSON report."""
    out = None if out_dir is None else Path(out_dir) / scn.name
    values = [None] if scn.sweep is None else list(next(iter(scn.sweep.values())))
    rows, results = [], {}
    for value in values:
        for seed in scn.seeds:
            row, res = _run_one(scn, value, seed, out)
            row["seed"], row["sweep_value"] = seed, value
            rows.append(row)
            results[(value, seed)] = res
    details: dict = {}
    if scn.kind == "online-rl":
        bad = bellman_completeness(scn.env, scn.cls)
        details["bellman_completeness"] = "skipped" if bad is None else [list(map(str, b)) for b in bad]
    if scn.baseline and scn.kind == "cb" and scn.sweep is None:
        details["baseline"] = _baseline(scn, out, {s: results[(None, s)] for s in scn.seeds})
    report = SweepReport(scn.name, scn.kind, rows, aggregate(rows, scn.kind), {}, details)
    report.checks = evaluate_checks(scn, report)
    if out is not None:
        io.write_json(out / "report.json", report.to_dict())
    return report


# -- checks ------------------------------------------------------------------------------

def _freq_ok(scn: Scenario, rows, flag) -> bool:
    delta = scn.config.get("delta", 0.1)
    return float(np.mean([r[flag] for r in rows])) >= 1 - delta - scn.freq_slack


def loglog_slope(xs, ys) -> float:
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if np.any(ys <= 0):
        return math.nan
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def cb_dimension(scn: Scenario, K: int) -> int:
    return eluder_dim(build_cb_instance(scn.cls, scn.env.C, K=K)).dimension


def evaluate_checks(scn: Scenario, report: SweepReport) -> dict:
    rows = report.rows
    out = {}
    for entry in scn.checks:
        name, params = (entry, {}) if isinstance(entry, str) else (entry["name"], entry)
        if name == "optimism":
            out[name] = _freq_ok(scn, rows, "optimism_all")
        elif name == "pessimism":
            out[name] = _freq_ok(scn, rows, "pessimism_all")
        elif name == "mle_concentration":
            out[name] = _freq_ok(scn, rows, "mle_concentration_ok")
        elif name == "lstar":
            out[name] = all(r["lstar_min_slack"] >= -INEQ_SLACK for r in rows)
        elif name == "eq2":
            out[name] = all(r["eq2_min_slack"] >= -INEQ_SLACK for r in rows)
        elif name == "deterministic_tail":
            out[name] = all(r["late_regret"] == 0.0 for r in rows)
        elif name == "decomposition":
            if scn.kind == "online-rl":
                out[name] = all(r["decomposition_min_slack"] >= -INEQ_SLACK for r in rows)
            else:
                out[name] = all(r["decomposition_slack"] >= -INEQ_SLACK for r in rows if r["pessimism_all"])
        elif name == "change_of_measure":
            out[name] = all(r["change_of_measure_slack"] >= -INEQ_SLACK for r in rows)
        elif name == "bellman_completeness":
            out[name] = report.details.get("bellman_completeness") == []
        elif name == "gap_log":
            Ks = sorted(scn.sweep["K"])
            med = {K: report.aggregates[str(K)]["median_regret_cum"] for K in Ks}
            d = scn.d if scn.d is not None else cb_dimension(scn, Ks[-1])
            beta = auto_beta_cb(Ks[-1], scn.cls.size(), scn.config.get("delta", 0.1))
            lhs = med[Ks[3]] - med[Ks[2]]
            rhs = med[Ks[1]] - med[Ks[0]] + 2 * d * beta
            report.details["gap_log"] = {"d_cb": d, "beta": beta, "lhs": lhs, "rhs": rhs}
            out[name] = lhs <= rhs
        elif name == "slope":
            key = "median_suboptimality" if scn.kind == "offline-rl" else "median_regret_cum"
            xs = sorted(next(iter(scn.sweep.values())))
            slope = loglog_slope(xs, [report.aggregates[str(x)][key] for x in xs])
            report.details["slope"] = slope
            lo, hi = params.get("min", -math.inf), params.get("max", math.inf)
            out[name] = bool(lo <= slope <= hi)
        else:
            raise ValueError(f"unknown check {name!r}")
    return out


# -- lemma sweeps ----------------------------------------------------------------------------

def check_lemmas(count: int = 10_000, seed: int = 0, rl_count: int | None = None,
                 grid_sizes=(2, 11, 51)) -> list[dict]:
    """Random-instance sweep over every executable inequality and identity.

    Each row reports the worst slack and, on failure, the offending instance.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = make_rng(seed, "check-lemmas", 0)
    rows = []
    for M in grid_sizes:
        pairs = [library.random_pair(rng, M) for _ in range(count)]
        f = np.stack([p[0] for p in pairs] + [np.eye(M)[0], np.eye(M)[0]])
        g = np.stack([p[1] for p in pairs] + [np.eye(M)[-1], np.eye(M)[0]])
        lo, hi = hellinger_sandwich_slack(f, g)
        for name, slack in [("mean_gap_two_variance", mean_gap_two_variance_slack(f, g)),
                            ("mean_gap_one_variance", mean_gap_one_variance_slack(f, g)),
                            ("variance_gap", variance_gap_slack(f, g)),
                            ("hellinger_lower", lo), ("hellinger_upper", hi)]:
            i = int(np.argmin(slack))
            ok = bool(slack[i] >= -INEQ_SLACK)
            rows.append({"check": f"{name}[M={M}]", "cases": len(slack), "worst_slack": float(slack[i]),
                         "passed": ok, "counterexample": None if ok else {"f": f[i].tolist(), "g": g[i].tolist()}})
    n_rl = max(1, count // 10) if rl_count is None else rl_count
    worst = {k: (math.inf, None) for k in ("performance_difference", "total_variance",
                                         "change_of_variance", "change_of_variance_top")}
    for t in range(n_rl):
        mdp = library.random_mdp(rng)
        H, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
        pi = library.random_policy(rng, H, S, A)
        f = library.random_f(rng, mdp, pi) if t % 10 else return_f(mdp, pi)
        l, r = performance_difference(mdp, f, pi)
        a, b = total_variance(mdp, pi)
        vals = {"performance_difference": -abs(l - r), "total_variance": -abs(a - b),
                "change_of_variance": float(change_of_variance_slack(mdp, f, pi).min()),
                "change_of_variance_top": min(float(change_of_variance_top_slack(mdp, f, pi, x).min())
                                              for x in range(S))}
        for k, v in vals.items():
            if v < worst[k][0]:
                worst[k] = (v, {"P": mdp.P.tolist(), "C": mdp.C.tolist(), "pi": pi.probs.tolist(),
                                "f": [x.tolist() for x in f]})
    for k, (v, inst) in worst.items():
        ok = bool(v >= -INEQ_SLACK)
        rows.append({"check": k, "cases": n_rl, "worst_slack": float(v), "passed": ok,
                     "counterexample": None if ok else inst})
    return rows


def return_f(mdp: TabularMDP, pi: Policy) -> list[np.ndarray]:
    """The true return tables, for which every divergence term vanishes."""
    from .env import return_tables
    return [np.array(z) for z in return_tables(mdp, pi)]


# -- bound reports -----------------------------------------------------------------------------

def report_bounds(scn: Scenario, report: SweepReport, d: float | None = None) -> dict:
    """Realised quantities against constant-free theorem shapes, plus implied first-order bounds."""
    if d is None:
        d = scn.d
    if d is None and scn.kind == "cb":
        try:
            K = max(next(iter(scn.sweep.values()))) if scn.sweep else scn.config["K"]
            d = cb_dimension(scn, K)
        except EluderGuardError:
            d = None
    out = {"name": scn.name, "kind": scn.kind, "d": d, "per_value": {}}
    H = 1 if scn.kind == "cb" else scn.env.horizon
    for value, agg in report.aggregates.items():
        row0 = next(r for r in report.rows if str(r["sweep_value"]) == value)
        cfg = row0["config"]
        entry = {"echo": {k: cfg.get(k) for k in ("beta", "delta", "class_size", "n_policies", "K", "N")},
                 "H": H}
        if scn.kind == "offline-rl":
            R, V, N = agg["median_suboptimality"], agg["median_var_comparator"], cfg["N"]
            cp = N * implied_constant(R, V / N) if N else 0.0
            entry.update({"median_suboptimality": R, "var_comparator": V, "implied_c_prime": cp,
                          "first_order": second_order_to_first_order(0.0, c_prime=cp,
                                                                     v_comp=agg["median_v_comparator"], N=N)})
        else:
            R, V = agg["median_regret_cum"], agg["median_sum_var"]
            c = implied_constant(R, V)
            entry.update({"median_regret": R, "median_sum_var": V, "implied_c": c,
                          "first_order": second_order_to_first_order(c, sum_v_star=agg["median_sum_v_star"])})
            if d is not None:
                shape = second_order_cb_shape(d, cfg["beta"], V) * (H if scn.kind != "cb" else 1)
                entry["second_order_shape"] = shape
                entry["ratio"] = R / shape if shape > 0 else None
        out["per_value"][value] = entry
    if scn.sweep:
        xs = sorted(next(iter(scn.sweep.values())))
        key = "median_suboptimality" if scn.kind == "offline-rl" else "median_regret_cum"
        out["loglog_slope"] = loglog_slope(xs, [report.aggregates[str(x)][key] for x in xs])
    if scn.kind == "cb":
        gq = gap_quantities(scn.env)
        out["cstar_gap"], out["var_gap"] = gq["cstar_gap"], gq["var_gap"]
    return out


def format_bounds(rep: dict) -> str:
    lines = [f"scenario {rep['name']} ({rep['kind']}), d = {rep['d']}"]
    for value, e in rep["per_value"].items():
        head = f"  [{value}] " if value != "None" else "  "
        if "median_suboptimality" in e:
            lines.append(f"{head}suboptimality {e['median_suboptimality']:.6g}  Var(Z) {e['var_comparator']:.4g}"
                         f"  c' {e['implied_c_prime']:.4g}  first-order {e['first_order'].get('offline', 0):.4g}")
        else:
            ratio = e.get("ratio")
            lines.append(f"{head}regret {e['median_regret']:.6g}  sum Var {e['median_sum_var']:.4g}"
                         f"  c {e['implied_c']:.4g}  first-order {e['first_order']['online']:.4g}"
                         + ("" if ratio is None else f"  regret/shape {ratio:.4g}"))
        lines.append(f"{head}echo {e['echo']}  H={e['H']}")
    if "loglog_slope" in rep:
        lines.append(f"  log-log slope {rep['loglog_slope']:.4g}")
    return "\n".join(lines)


# -- built-in scenarios ------------------------------------------------------------------------

DEFAULT_CHECKS = {
    "cb": ["optimism", "mle_concentration", "lstar", "eq2"],
    "online-rl": ["optimism", "decomposition", "bellman_completeness"],
    "offline-rl": ["pessimism", "decomposition", "change_of_measure"],
}
DEFAULT_CONFIG = {"cb": {"K": 2000}, "online-rl": {"K": 100}, "offline-rl": {"N": 500}}
BUILTIN_KIND = {"cb_deterministic": "cb", "cb_gap": "cb", "cb_variance_scaled": "cb",
                "rl_small": "online-rl", "offline_deterministic": "offline-rl",
                "offline_stochastic": "offline-rl"}


def builtin_scenario(builtin: str, kind: str | None = None, seeds: int = 10, args: dict | None = None,
                     config: dict | None = None, master_seed: int = 0) -> Scenario:
    """A scenario around a library instance with the default checks for its kind."""
    if builtin not in library.BUILTINS:
        raise ValueError(f"unknown builtin {builtin!r}; choose from {sorted(library.BUILTINS)}")
    kind = kind or BUILTIN_KIND[builtin]
    checks = list(DEFAULT_CHECKS[kind])
    if builtin == "cb_deterministic":
        checks.append("deterministic_tail")
    obj = {"schema_version": io.SCHEMA_VERSION, "kind": "scenario", "type": kind, "name": builtin,
           "instance": {"builtin": builtin, "args": dict(args or {})}, "seeds": seeds,
           "config": {**DEFAULT_CONFIG[kind], **(config or {})}, "checks": checks, "master_seed": master_seed}
    return scenario_from_dict(obj)
