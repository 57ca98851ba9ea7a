"""Experiment runner: config parsing, solver dispatch, CSV traces, comparison.

Configs are TOML.  ``run`` executes one experiment deterministically (same
config and seed give byte-identical CSV output), ``sweep`` runs a glob of
configs, ``compare`` aligns two traces on cumulative bits, and ``validate``
checks a config without running it.

Exit codes: 0 ok, 2 config error, 3 schedule invalid, 4 runtime numeric
failure.
"""

import argparse
import glob
import hashlib
import json
import math
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import network, problems, schedules, solvers
from .oracles import GradientOracle
from .schedules import Schedule, epsilon_bound_sweep, theory_constants
from .solvers import ScheduleError
from .trace import RunTrace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SCHEDULE = 3
EXIT_NUMERIC = 4

SOLVERS = ("primal", "primal_dual", "decentralized")
POLICIES = ("constant", "matched_r", "matched_m", "variable_r", "variable_m")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config surface


def parse_config(text):
    """Parse TOML text into a plain dict; syntax errors carry line numbers."""
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc


def load_config(path):
    with open(path, "rb") as fh:
        raw = fh.read().decode("utf-8")
    return parse_config(raw)


def serialise_config(cfg):
    """Write a parsed config back to TOML (scalars, lists, one table level)."""
    lines = []
    tables = {}
    for key, value in cfg.items():
        if isinstance(value, dict):
            tables[key] = value
        else:
            lines.append(f"{key} = {_toml_value(value)}")
    for name, table in tables.items():
        lines.append("")
        lines.append(f"[{name}]")
        for key, value in table.items():
            if isinstance(value, dict):
                raise ConfigError(f"nested table {name}.{key} not supported")
            lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def _toml_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        if isinstance(value, float) and (math.isnan(value) or math.isinf(value)):
            raise ConfigError("non-finite numbers not allowed in configs")
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"unsupported config value {value!r}")


def _req(table, key, kinds, where):
    if key not in table:
        raise ConfigError(f"missing required key '{where}.{key}'"
                          if where else f"missing required key '{key}'")
    value = table[key]
    if not isinstance(value, kinds):
        raise ConfigError(f"key '{where + '.' if where else ''}{key}' has wrong type")
    return value


def validate_config(cfg):
    """Semantic validation; returns the config with defaults filled in."""
    out = dict(cfg)
    solver = _req(cfg, "solver", str, "")
    if solver not in SOLVERS:
        raise ConfigError(f"solver must be one of {SOLVERS}, got {solver!r}")
    _req(cfg, "seed", int, "")
    out.setdefault("float_bits", 64)
    if out["float_bits"] not in (32, 64):
        raise ConfigError("float_bits must be 32 or 64")
    out.setdefault("bit_meter", "nominal")
    if out["bit_meter"] not in ("nominal", "wire"):
        raise ConfigError("bit_meter must be 'nominal' or 'wire'")
    if "T" not in cfg and "target_eps" not in cfg:
        raise ConfigError("either 'T' or 'target_eps' must be given")
    if "target_eps" in cfg:
        out.setdefault("T_max", 10000)

    problem = _req(cfg, "problem", dict, "")
    kind = _req(problem, "kind", str, "problem")
    if kind not in ("quadratic", "lse", "wb"):
        raise ConfigError(f"unknown problem kind {kind!r}")
    if kind == "quadratic" and solver == "primal":
        pass
    if kind == "lse" and solver != "primal":
        raise ConfigError("lse runs use the primal solver")
    if kind == "wb" and solver != "decentralized":
        raise ConfigError("wb runs use the decentralized solver")

    if solver == "decentralized":
        topo = _req(cfg, "topology", dict, "")
        tkind = _req(topo, "kind", str, "topology")
        if tkind not in ("ring", "star", "complete", "grid", "erdos_renyi"):
            raise ConfigError(f"unknown topology kind {tkind!r}")
        if tkind == "grid":
            _req(topo, "rows", int, "topology")
            _req(topo, "cols", int, "topology")
        else:
            _req(topo, "m", int, "topology")
        if tkind == "erdos_renyi":
            _req(topo, "p", (int, float), "topology")
            _req(topo, "seed", int, "topology")
    elif "topology" in cfg:
        raise ConfigError("topology table is only valid for decentralized runs")

    sched = _req(cfg, "schedule", dict, "")
    policy = sched.get("policy", "constant")
    if policy not in POLICIES:
        raise ConfigError(f"schedule.policy must be one of {POLICIES}")
    if policy in ("constant", "matched_r") and "r" not in sched:
        raise ConfigError(f"schedule.policy '{policy}' needs 'r'")
    if policy in ("constant", "matched_m") and "M" not in sched:
        raise ConfigError(f"schedule.policy '{policy}' needs 'M'")
    if policy in ("matched_r", "matched_m", "variable_r", "variable_m"):
        if sched.get("sigma", 0.0) <= 0 and policy != "matched_m":
            raise ConfigError(f"schedule.policy '{policy}' needs sigma > 0")
    if policy in ("variable_r", "variable_m"):
        for key in ("eps", "delta"):
            _req(sched, key, (int, float), "schedule")
    compressor = sched.get("compressor", "pps")
    if compressor not in solvers.COMPRESSORS:
        raise ConfigError(f"schedule.compressor must be one of {solvers.COMPRESSORS}")
    return out


# ---------------------------------------------------------------------------
# builders


def build_topology(cfg):
    topo = cfg["topology"]
    kind = topo["kind"]
    if kind == "ring":
        return network.Topology.ring(topo["m"])
    if kind == "star":
        return network.Topology.star(topo["m"])
    if kind == "complete":
        return network.Topology.complete(topo["m"])
    if kind == "grid":
        return network.Topology.grid(topo["rows"], topo["cols"])
    return network.Topology.erdos_renyi(topo["m"], topo["p"], topo["seed"])


def build_problem(cfg):
    """Instantiate the problem; returns (object, metadata dict).

    Metadata carries the dimension of the communicated vector plus default
    L / R / B values that the schedule builder uses unless overridden.
    """
    p = cfg["problem"]
    kind = p["kind"]
    gen = np.random.default_rng(p.get("seed", 0))

    if kind == "quadratic":
        n = p.get("n", 10)
        if cfg["solver"] == "primal_dual":
            mc = p.get("m_constraints", 3)
            local = problems.QuadraticLocal(gen.uniform(-1, 1, n))
            A = gen.standard_normal((mc, n))
            A /= np.linalg.norm(A, axis=1, keepdims=True)
            # constraints offset mildly from the unconstrained optimum
            b = A @ local.center + gen.uniform(-0.15, 0.15, mc)
            noise = p.get("noise_scale", 0.0)
            prob = solvers.quadratic_affine_problem(local, A, b, noise_scale=noise)
            g0 = solvers.dual_oracle(prob, np.zeros(mc))
            B = p.get("B", 1.2 * float(np.abs(g0).sum()) + 6.0 * noise * math.sqrt(mc))
            return prob, {"msg_dim": mc, "L": prob.L, "R": prob.R, "B": B,
                          "A_norm": prob.A_norm}
        if cfg["solver"] == "primal":
            local = problems.QuadraticLocal(gen.uniform(-1, 1, n))
            oracle = GradientOracle(
                local.grad, n, noise_scale=p.get("noise_scale", 0.0),
                value_fn=local.value,
            )
            oracle.L = float(np.linalg.eigvalsh(local.Q).max())
            B = p.get("B", 2.0 * float(np.abs(local.grad(np.zeros(n))).sum()) + 1.0)
            return oracle, {"msg_dim": n, "L": oracle.L,
                            "R": p.get("R", 2.0 * float(np.linalg.norm(local.center))),
                            "B": B}
        # decentralized consensus over quadratic locals
        m_nodes = cfg["topology"].get("m") or (
            cfg["topology"]["rows"] * cfg["topology"]["cols"]
        )
        centers = gen.uniform(-1, 1, (m_nodes, n))
        locs = [problems.QuadraticLocal(c) for c in centers]
        noise = p.get("noise_scale", 0.0)
        if noise > 0:
            locs = [problems.NoisyNode(loc, noise) for loc in locs]
        return locs, {"msg_dim": n, "B": p.get("B", 4.0 * n)}

    if kind == "lse":
        n_terms = p.get("n_terms", 12)
        dim = p.get("n", 10)
        A = problems.random_row_stochastic(n_terms, dim, gen)
        b = np.ones(n_terms)
        lse = problems.LogSumExp(A, b)
        oracle = GradientOracle(lse.grad, dim, noise_scale=p.get("noise_scale", 0.0),
                                value_fn=lse.value)
        oracle.L = lse.lipschitz()
        return oracle, {"msg_dim": dim, "L": oracle.L, "R": p.get("R", 10.0),
                        "B": 1.0, "simplified": True}

    # wb
    m_nodes = cfg["topology"].get("m") or (
        cfg["topology"]["rows"] * cfg["topology"]["cols"]
    )
    nodes = problems.gaussian_wb_instance(
        m_nodes, p.get("n", 50), p.get("seed", 0), gamma=p.get("gamma"),
    )
    return nodes, {"msg_dim": p.get("n", 50), "B": 1.0, "simplified": True,
                   "gamma": nodes[0].gamma}


def build_schedule(cfg, meta, topology=None):
    """Assemble the Schedule from the policy table and problem metadata."""
    s = cfg["schedule"]
    policy = s.get("policy", "constant")
    compressor = s.get("compressor", "pps")
    sigma = float(s.get("sigma", 0.0))
    n_msg = meta["msg_dim"]
    B = float(s.get("B", meta.get("B", 1.0)))
    simplified = bool(s.get("simplified", meta.get("simplified", False)))

    if topology is not None:
        spec = network.laplacian(topology)
        gamma = meta.get("gamma", s.get("gamma", 1.0))
        L_default = topology.m * spec.norm / gamma
        B_star = float(s.get("B_star", 1.0))
        lam2 = spec.lambda2 if spec.lambda2 > 0 else 1.0
        R_default = math.sqrt(B_star ** 2 / (topology.m * lam2))
    else:
        L_default = meta.get("L", 1.0)
        R_default = meta.get("R", 1.0)
    L = float(s.get("L", L_default))
    R = float(s.get("R", R_default))

    if policy == "constant":
        r_fn, M_fn = int(s["r"]), int(s.get("M", 1))
    elif policy == "matched_r":
        r = int(s["r"])
        M = schedules.m_from_r(r, n_msg, B, sigma)
        r_fn, M_fn = r, M
    elif policy == "matched_m":
        M = int(s["M"])
        r = schedules.r_from_m(M, n_msg, B, sigma) if sigma > 0 else 1
        r_fn, M_fn = r, M
    else:
        consts = theory_constants(float(s["delta"]), float(s.get("J", 1.0)))
        eps = float(s["eps"])
        A_norm = float(s.get("A_norm", meta.get("A_norm", 1.0)))
        if policy == "variable_r":
            def r_fn(t):
                return schedules.variable_r(schedules.default_alpha(t), eps, L,
                                            sigma, consts, R, A_norm)

            def M_fn(t):
                return schedules.m_from_r(r_fn(t), n_msg, B, sigma)
        else:
            def M_fn(t):
                return schedules.variable_M(schedules.default_alpha(t), eps, L,
                                            n_msg, B, consts, R, A_norm)

            def r_fn(t):
                if sigma <= 0:
                    return 1
                return schedules.r_from_m(M_fn(t), n_msg, B, sigma)

    sched = Schedule.default(
        L, R, n=n_msg, B=B, sigma=sigma, r=r_fn, M=M_fn,
        simplified=simplified, quantized=(compressor != "identity"),
    )
    info = {"L": L, "R": R, "compressor": compressor,
            "A_norm": float(s.get("A_norm", meta.get("A_norm", 1.0)))}
    return sched, info


def _resolve_T(cfg, sched, info):
    """Fixed horizon, or the first T whose bound meets the target accuracy."""
    if "T" in cfg:
        return int(cfg["T"]), None
    target = float(cfg["target_eps"])
    T_max = int(cfg["T_max"])
    delta = float(cfg["schedule"].get("delta", 0.1))
    bounds = epsilon_bound_sweep(T_max, delta, sched, info["R"], info["L"],
                                 info["A_norm"])
    hit = np.nonzero(bounds[1:] <= target)[0]
    if hit.size:
        return int(hit[0]) + 1, None
    return T_max, f"target_eps {target} not reached within T_max={T_max}"


# ---------------------------------------------------------------------------
# commands


def _problem_signature(cfg):
    keys = {"problem": cfg["problem"], "solver": cfg["solver"],
            "topology": cfg.get("topology")}
    return hashlib.sha256(
        json.dumps(keys, sort_keys=True).encode()
    ).hexdigest()[:16]


def _out_path(cfg, override):
    out = override or cfg.get("out", "trace.csv")
    out_dir = os.environ.get("PPSQ_OUT_DIR")
    if out_dir:
        out = os.path.join(out_dir, os.path.basename(out))
    return out


def run_config(cfg, out_override=None):
    """Execute one validated config; returns (exit_code, out_path or None)."""
    cfg = validate_config(cfg)
    solver = cfg["solver"]
    seed = cfg["seed"]
    float_bits = cfg["float_bits"]

    topology = build_topology(cfg) if solver == "decentralized" else None
    prob, meta = build_problem(cfg)
    sched, info = build_schedule(cfg, meta, topology)
    compressor = info["compressor"]
    T, warning = _resolve_T(cfg, sched, info)
    if warning:
        print(f"warning: {warning}", file=sys.stderr)

    meter = cfg["bit_meter"]
    if solver == "primal_dual":
        result = solvers.primal_dual_solve(
            prob, sched, T, seed, compressor=compressor, float_bits=float_bits,
            bit_meter=meter,
        )
    elif solver == "primal":
        result = solvers.primal_solve(
            prob, sched, T, seed, compressor=compressor, float_bits=float_bits,
            bit_meter=meter, L=info["L"],
        )
    else:
        result = network.decentralized_solve(
            prob, topology, sched, T, seed, compressor=compressor,
            float_bits=float_bits, bit_meter=meter, L=info["L"],
            keep_edge_log="edge_log" in cfg,
        )

    out = _out_path(cfg, out_override)
    result.trace.to_csv(out)
    if cfg.get("edge_log"):
        with open(_out_path(cfg, cfg["edge_log"]), "w") as fh:
            fh.write("round,src,dst,bits\n")
            for row in result.edge_log:
                fh.write("%d,%d,%d,%d\n" % row)
    meta_path = out + ".meta.json"
    meta_doc = {
        "signature": _problem_signature(cfg),
        "solver": solver,
        "seed": seed,
        "T": T,
        "compressor": compressor,
        "L": info["L"],
        "R": info["R"],
    }
    if solver == "primal_dual" and "delta" in cfg["schedule"]:
        consistency = solvers.check_bound_consistency(
            result, sched, prob, T, float(cfg["schedule"]["delta"])
        )
        meta_doc["bound"] = consistency
        if consistency["bound_violated"]:
            print("warning: run exceeded the theoretical bound; "
                  "R or sigma may be misspecified", file=sys.stderr)
    with open(meta_path, "w") as fh:
        json.dump(meta_doc, fh, sort_keys=True, indent=1)

    tr = result.trace
    print(
        f"final dual={tr.final('dual_value'):.6g} "
        f"gap={tr.final('gap'):.6g} "
        f"bits={tr.final('bits')} "
        f"oracle_calls={tr.final('oracle_calls')} "
        f"rows={len(tr)} out={out}"
    )
    return EXIT_OK, out


def align_on_bits(trace_a, trace_b):
    """Dual value of each trace at matched cumulative-bit budgets.

    Steps through the coarser bit grid; for each level reports both traces'
    dual values at the largest row not exceeding the budget.
    """
    bits_a = trace_a.column("bits")
    bits_b = trace_b.column("bits")
    dual_a = trace_a.column("dual_value")
    dual_b = trace_b.column("dual_value")
    levels = bits_a if bits_a[-1] <= bits_b[-1] else bits_b
    rows = []
    for level in levels:
        ia = int(np.searchsorted(bits_a, level, side="right")) - 1
        ib = int(np.searchsorted(bits_b, level, side="right")) - 1
        if ia < 0 or ib < 0:
            continue
        ratio = dual_a[ia] / dual_b[ib] if dual_b[ib] != 0 else float("nan")
        rows.append((int(level), float(dual_a[ia]), float(dual_b[ib]), ratio))
    return rows


def compare_traces(path_a, path_b):
    meta_a, meta_b = path_a + ".meta.json", path_b + ".meta.json"
    if os.path.exists(meta_a) and os.path.exists(meta_b):
        with open(meta_a) as fh:
            sig_a = json.load(fh).get("signature")
        with open(meta_b) as fh:
            sig_b = json.load(fh).get("signature")
        if sig_a != sig_b:
            raise ConfigError("traces come from different problems")
    a = RunTrace.from_csv(path_a)
    b = RunTrace.from_csv(path_b)
    rows = align_on_bits(a, b)
    print("bits,dual_a,dual_b,ratio")
    for bits, da, db, ratio in rows:
        print(f"{bits},{da:.8g},{db:.8g},{ratio:.6g}")
    final_b = b.final("dual_value")
    bits_b = b.final("bits")
    da = a.column("dual_value")
    ba = a.column("bits")
    within = np.abs(da - final_b) <= 0.05 * abs(final_b)
    if np.any(within):
        first = int(np.argmax(within))
        print(
            f"# trace_a reaches within 5% of trace_b's final dual value "
            f"({final_b:.6g}) at bits={int(ba[first])} "
            f"({ba[first] / bits_b:.4g}x of trace_b's total {int(bits_b)})"
        )
    else:
        print("# trace_a never reaches within 5% of trace_b's final dual value")
    return EXIT_OK


def validate_command(path):
    """Config + strict schedule check; run() additionally tolerates the
    noiseless beta == L boundary, which this command reports."""
    cfg = validate_config(load_config(path))
    topology = build_topology(cfg) if cfg["solver"] == "decentralized" else None
    prob, meta = build_problem(cfg)
    sched, info = build_schedule(cfg, meta, topology)
    T, _ = _resolve_T(cfg, sched, info)
    violations = schedules.validate(sched, info["L"], T)
    if violations:
        for v in violations[:10]:
            print(f"schedule condition {v.condition} violated at t={v.t}: {v.detail}",
                  file=sys.stderr)
        return EXIT_SCHEDULE
    print(f"ok: solver={cfg['solver']} T={T} L={info['L']:.6g} R={info['R']:.6g}")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ppsq",
        description="PPS-quantized optimisation experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute one experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="override the trace path")
    p_sweep = sub.add_parser("sweep", help="run every config matching a glob")
    p_sweep.add_argument("pattern")
    p_cmp = sub.add_parser("compare", help="align two traces on cumulative bits")
    p_cmp.add_argument("trace_a")
    p_cmp.add_argument("trace_b")
    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("config")
    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            code, _ = run_config(load_config(args.config), args.out)
            return code
        if args.command == "sweep":
            paths = sorted(glob.glob(args.pattern))
            if not paths:
                raise ConfigError(f"no configs match {args.pattern!r}")
            for path in paths:
                print(f"== {path}")
                cfg = load_config(path)
                base = os.path.splitext(os.path.basename(path))[0] + ".csv"
                run_config(cfg, cfg.get("out", base))
            return EXIT_OK
        if args.command == "compare":
            return compare_traces(args.trace_a, args.trace_b)
        return validate_command(args.config)
    except ScheduleError as exc:
        print(f"schedule error: {exc}", file=sys.stderr)
        return EXIT_SCHEDULE
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
