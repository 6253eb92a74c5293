"""Command-line interface for the martingale transport toolbox.

Inputs are JSON files; results are printed as JSON or written with
``--out``.  Exit codes: 0 success, 2 configuration / input error,
3 solver error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .approximation import approximate_coupling
from .convex_order import ConvexOrderError, irreducible_decomposition
from .couplings import DiscreteCoupling
from .measures import DiscreteMeasure, LiftedMeasure
from .solvers import (
    CostSpec,
    copula_lift,
    price_american,
    shadow_coupling,
    solve_extended_mot,
    solve_mot,
    solve_wmot_fw,
    vix_dual_lp,
    vix_primal_lp,
)
from .stability import ConfigError, ExperimentConfig, emit, run_stability

COSTS = {
    "abs": lambda x, u, ys: np.abs(ys - x),
    "square": lambda x, u, ys: np.asarray(ys) ** 2,
    "root": lambda x, u, ys: np.sqrt(1.0 + np.asarray(ys) ** 2),
    "shadow": lambda x, u, ys: (1.0 - u) * np.sqrt(1.0 + np.asarray(ys) ** 2),
    "uy": lambda x, u, ys: u * np.asarray(ys),
}

KERNEL_COSTS = {
    "meanabs_sq": CostSpec(
        kernel_cost=lambda x, u, ys, k: float(np.dot(np.abs(ys), k)) ** 2,
        kernel_grad=lambda x, u, ys, k: 2.0 * float(np.dot(np.abs(ys), k)) * np.abs(ys),
    ),
    "variance": CostSpec(
        kernel_cost=lambda x, u, ys, k: float(np.dot(ys**2, k)) - float(np.dot(ys, k)) ** 2,
        kernel_grad=lambda x, u, ys, k: np.asarray(ys) ** 2 - 2.0 * float(np.dot(ys, k)) * np.asarray(ys),
    ),
}


def _load(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _measure(data: dict) -> DiscreteMeasure:
    return DiscreteMeasure(data["atoms"], data["weights"])


def _lifted(data: dict) -> LiftedMeasure:
    return LiftedMeasure(data["atoms"], data["weights"])


def _measure_json(m: DiscreteMeasure) -> dict:
    return {"atoms": m.atoms.tolist(), "weights": m.weights.tolist()}


def _write(report: dict, out: str | None):
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _coupling_json(c: DiscreteCoupling) -> dict:
    return json.loads(c.to_json())


def cmd_mot(args) -> dict:
    data = _load(args.input)
    r = solve_mot(_measure(data["mu"]), _measure(data["nu"]), CostSpec(fn=COSTS[args.cost]), args.sense)
    return {"value": r["value"], "coupling": _coupling_json(r["coupling"])}


def cmd_emot(args) -> dict:
    data = _load(args.input)
    r = solve_extended_mot(
        _lifted(data["mu_bar"]), _measure(data["nu"]), CostSpec(fn=COSTS[args.cost]), args.sense
    )
    return {"value": r["value"], "coupling": _coupling_json(r["coupling"])}


def cmd_wmot(args) -> dict:
    data = _load(args.input)
    r = solve_wmot_fw(_lifted(data["mu_bar"]), _measure(data["nu"]), KERNEL_COSTS[args.cost], tol=args.tol)
    return {
        "value": r["value"],
        "fw_gap": r["fw_gap"],
        "iterations": r["iterations"],
        "coupling": _coupling_json(r["coupling"]),
    }


def cmd_amer(args) -> dict:
    data = _load(args.input)
    mu, nu = _measure(data["mu"]), _measure(data["nu"])
    phi1 = dict(zip(mu.atoms.tolist(), data["phi1"]))
    phi2 = np.asarray(data["phi2"], dtype=float)
    xs, ys = mu.atoms.tolist(), nu.atoms.tolist()
    r = price_american(
        mu,
        nu,
        lambda x: phi1[x],
        lambda x, y: phi2[xs.index(x), ys.index(y)],
    )
    return {
        "value": r["value"],
        "exercise_mass": r["exercise_mass"],
        "continue_mass": r["continue_mass"],
    }


def cmd_vix(args) -> dict:
    data = _load(args.input)
    mu, nu = _measure(data["mu"]), _measure(data["nu"])
    r = vix_dual_lp(mu, nu, args.tau, args.bins)
    p = vix_primal_lp(mu, nu, args.tau, r["edges"])
    return {
        "d_lo": r["d_lo"],
        "d_hi": r["d_hi"],
        "p_value": p["p_value"],
        "bins": args.bins,
        "tau": args.tau,
    }


def cmd_shadow(args) -> dict:
    data = _load(args.input)
    mu, nu = _measure(data["mu"]), _measure(data["nu"])
    mb = copula_lift(mu, args.copula, args.m)
    r = shadow_coupling(mb, nu)
    return {"value": r["value"], "coupling": _coupling_json(r["coupling"])}


def cmd_decompose(args) -> dict:
    data = _load(args.input)
    d = irreducible_decomposition(_measure(data["mu"]), _measure(data["nu"]))
    return {
        "components": [
            {"interval": list(c.interval), "mu": _measure_json(c.mu), "nu": _measure_json(c.nu)}
            for c in d.components
        ],
        "stationary": _measure_json(d.stationary) if not d.stationary.is_zero else None,
    }


def cmd_approx(args) -> dict:
    data = _load(args.input)
    pi = DiscreteCoupling.from_json(json.dumps(data["coupling"]))
    out, diag = approximate_coupling(
        pi, _lifted(data["mu_bar"]), _measure(data["nu"]), args.eps
    )
    return {"aw1": diag["aw1"], "stages": diag["stages"], "coupling": _coupling_json(out)}


def cmd_stability(args) -> dict:
    with open(args.config) as fh:
        config = ExperimentConfig.from_json(fh.read())
    report = run_stability(config)
    written = []
    for fmt in args.formats.split(","):
        text = emit(report, fmt)
        ext = "csv" if fmt == "csv" else "json" if fmt == "json" else "plot.json"
        path = f"{args.out_prefix}.{ext}"
        with open(path, "w") as fh:
            fh.write(text)
        written.append(path)
    return {"rows": len(report.rows), "files": written}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emot", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--input", required=True, help="JSON input file")
        sp.add_argument("--out", help="output JSON path (default: stdout)")

    sp = sub.add_parser("mot", help="martingale optimal transport")
    common(sp)
    sp.add_argument("--cost", choices=sorted(COSTS), default="abs")
    sp.add_argument("--sense", choices=["min", "max"], default="min")
    sp.set_defaults(fn=cmd_mot)

    sp = sub.add_parser("emot", help="lifted martingale transport")
    common(sp)
    sp.add_argument("--cost", choices=sorted(COSTS), default="abs")
    sp.add_argument("--sense", choices=["min", "max"], default="min")
    sp.set_defaults(fn=cmd_emot)

    sp = sub.add_parser("wmot", help="convex kernel cost via Frank-Wolfe")
    common(sp)
    sp.add_argument("--cost", choices=sorted(KERNEL_COSTS), default="meanabs_sq")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.set_defaults(fn=cmd_wmot)

    sp = sub.add_parser("amer", help="two-date American option price")
    common(sp)
    sp.set_defaults(fn=cmd_amer)

    sp = sub.add_parser("vix", help="VIX subreplication sandwich")
    common(sp)
    sp.add_argument("--tau", type=float, default=1.0)
    sp.add_argument("--bins", type=int, default=200)
    sp.set_defaults(fn=cmd_vix)

    sp = sub.add_parser("shadow", help="shadow coupling from a copula lift")
    common(sp)
    sp.add_argument("--copula", choices=["hoeffding_frechet", "independence"], default="hoeffding_frechet")
    sp.add_argument("--m", type=int, default=8)
    sp.set_defaults(fn=cmd_shadow)

    sp = sub.add_parser("decompose", help="irreducible decomposition")
    common(sp)
    sp.set_defaults(fn=cmd_decompose)

    sp = sub.add_parser("approx", help="coupling approximation pipeline")
    common(sp)
    sp.add_argument("--eps", type=float, default=0.05)
    sp.set_defaults(fn=cmd_approx)

    sp = sub.add_parser("stability", help="stability experiment harness")
    sp.add_argument("--config", required=True, help="JSON config file")
    sp.add_argument("--out-prefix", default="stability_report")
    sp.add_argument("--formats", default="csv,json")
    sp.add_argument("--out", help="summary JSON path (default: stdout)")
    sp.set_defaults(fn=cmd_stability)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report = args.fn(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 2
    except (ConvexOrderError, RuntimeError, ValueError, AssertionError) as exc:
        sys.stderr.write(f"solver error: {exc}\n")
        return 3
    _write(report, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
