"""Stability experiment harness: perturb marginals at decreasing scales,
repair convex order, re-solve, and report value and coupling gaps.

Reports are deterministic for a fixed config and seed: the random
generator is a seeded 64-bit PCG and serialization uses sorted keys with
round-trip-exact floats.  Wall-clock timings are therefore excluded from
emitted reports unless explicitly requested.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .convex_order import ConvexOrderError, convex_order_projection
from .couplings import adapted_wasserstein, hausdorff_mot
from .lp_core import DimensionGuardError
from .measures import (
    DiscreteMeasure,
    LiftedMeasure,
    quantile_discretize,
    total_variation,
    wasserstein_line,
)
from .solvers import (
    CostSpec,
    copula_lift,
    extract_barriers,
    price_american,
    shadow_coupling,
    solve_mot,
    solve_wmot_fw,
    vix_dual_lp,
)

SCHEMA_VERSION = 1

PERTURBATIONS = ("quantile_discretize", "atom_jitter", "mass_jitter")
PROBLEMS = ("mot", "wmot", "amer", "vix", "shadow")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    problem: str = "mot"
    perturbation: str = "atom_jitter"
    scales: tuple = (0.1, 0.05, 0.025)
    seed: int = 0
    tau: float = 1.0
    bins: int = 100
    copula_m: int = 8
    barrier_threshold: float = 0.25
    include_timings: bool = False

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.perturbation not in PERTURBATIONS:
            raise ConfigError(f"unknown perturbation {self.perturbation!r}")
        scales = tuple(float(s) for s in self.scales)
        if len(scales) == 0 or any(s <= 0 for s in scales):
            raise ConfigError("scales must be positive")
        if any(s2 >= s1 for s1, s2 in zip(scales, scales[1:])):
            raise ConfigError("scales must be strictly decreasing")
        self.scales = scales

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        data = json.loads(text)
        try:
            mu = DiscreteMeasure(data["mu"]["atoms"], data["mu"]["weights"])
            nu = DiscreteMeasure(data["nu"]["atoms"], data["nu"]["weights"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad marginals in config: {exc}") from exc
        kwargs = {k: v for k, v in data.items() if k not in ("mu", "nu")}
        try:
            return ExperimentConfig(mu=mu, nu=nu, **kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class StabilityReport:
    schema_version: int
    problem: str
    perturbation: str
    seed: int
    rows: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "problem": self.problem,
            "perturbation": self.perturbation,
            "seed": self.seed,
            "rows": self.rows,
        }


ROW_FIELDS = [
    "scale",
    "status",
    "reason",
    "w1_mu",
    "w1_nu",
    "value_base",
    "value_pert",
    "value_gap",
    "aw_gap",
    "hausdorff_lower",
    "hausdorff_upper",
    "barrier_exceedance",
    "kernel_tv",
    "time_s",
]


def perturb_marginals(mu: DiscreteMeasure, nu: DiscreteMeasure, family: str, scale: float, rng):
    """One perturbation draw; the returned pair is repaired into convex order."""
    if family == "quantile_discretize":
        k = max(2, int(np.ceil(1.0 / scale)))
        mu_p = mu
        nu_raw = quantile_discretize(nu, k)
    elif family == "atom_jitter":
        mu_p = DiscreteMeasure(mu.atoms + scale * rng.uniform(-1, 1, len(mu)), mu.weights)
        nu_raw = DiscreteMeasure(nu.atoms + scale * rng.uniform(-1, 1, len(nu)), nu.weights)
    elif family == "mass_jitter":
        w = nu.weights * (1.0 + scale * rng.uniform(-1, 1, len(nu)))
        nu_raw = DiscreteMeasure(nu.atoms, w * (nu.mass / w.sum()))
        mu_p = mu
    else:
        raise ConfigError(f"unknown perturbation {family!r}")
    shift = mu_p.first_moment() / mu_p.mass - nu_raw.first_moment() / nu_raw.mass
    nu_raw = DiscreteMeasure(nu_raw.atoms + shift, nu_raw.weights)
    nu_p = convex_order_projection(mu_p, nu_raw)
    return mu_p, nu_p


def _barrier_exceedance(c_base, c_pert, threshold: float) -> tuple:
    """Mass where the perturbed barriers drift beyond the threshold on the
    region of genuinely binary base kernels, plus a total-variation
    diagnostic of the lifted first marginals."""
    bm0, _ = extract_barriers(c_base)
    bm1, _ = extract_barriers(c_pert)
    exceed = 0.0
    for i in range(len(bm0.weights)):
        if bm0.t1[i] == bm0.t2[i]:
            continue
        d = np.abs(bm1.atoms - bm0.atoms[i]).sum(axis=1)
        if d.size == 0:
            exceed += float(bm0.weights[i])
            continue
        j = int(np.argmin(d))
        drift = abs(bm1.t1[j] - bm0.t1[i]) + abs(bm1.t2[j] - bm0.t2[i])
        if drift > threshold:
            exceed += float(bm0.weights[i])
    tv = total_variation(
        c_base.first_marginal.x_marginal(), c_pert.first_marginal.x_marginal()
    )
    return exceed, tv


def _wmot_cost() -> CostSpec:
    return CostSpec(
        kernel_cost=lambda x, u, ys, k: float(np.dot(np.abs(ys), k)) ** 2,
        kernel_grad=lambda x, u, ys, k: 2.0 * float(np.dot(np.abs(ys), k)) * np.abs(ys),
    )


def _solve(problem: str, mu, nu, cfg: ExperimentConfig):
    if problem == "mot":
        r = solve_mot(mu, nu, CostSpec(fn=lambda x, u, ys: np.abs(ys - x)))
        return r["value"], r["coupling"]
    if problem == "wmot":
        r = solve_wmot_fw(LiftedMeasure.from_measure(mu), nu, _wmot_cost(), tol=1e-8)
        if r["fw_gap"] > 1e-6:
            raise RuntimeError(f"Frank-Wolfe gap {r['fw_gap']:.2e} above certificate")
        return r["value"], r["coupling"]
    if problem == "amer":
        r = price_american(mu, nu, lambda x: max(x, 0.0), lambda x, y: max(y, 0.0))
        return r["value"], None
    if problem == "vix":
        r = vix_dual_lp(mu, nu, cfg.tau, cfg.bins)
        return 0.5 * (r["d_lo"] + r["d_hi"]), r["coupling"]
    if problem == "shadow":
        mb = copula_lift(mu, "hoeffding_frechet", cfg.copula_m)
        r = shadow_coupling(mb, nu)
        return r["value"], r["coupling"]
    raise ConfigError(f"unknown problem {problem!r}")


def run_stability(config: ExperimentConfig) -> StabilityReport:
    """Run the perturbation ladder and collect per-scale gap rows.

    Any stage failure marks that scale's row with a tagged reason and the
    remaining scales still run.
    """
    rng = np.random.default_rng(config.seed)
    base_value, base_coupling = _solve(config.problem, config.mu, config.nu, config)
    rows = []
    for scale in config.scales:
        row = {f: None for f in ROW_FIELDS}
        row["scale"] = scale
        t0 = time.perf_counter()
        try:
            mu_p, nu_p = perturb_marginals(
                config.mu, config.nu, config.perturbation, scale, rng
            )
            row["w1_mu"] = wasserstein_line(config.mu, mu_p, 1.0)
            row["w1_nu"] = wasserstein_line(config.nu, nu_p, 1.0)
            value_p, coupling_p = _solve(config.problem, mu_p, nu_p, config)
            row["value_base"] = base_value
            row["value_pert"] = value_p
            row["value_gap"] = abs(value_p - base_value)
            if base_coupling is not None and coupling_p is not None:
                row["aw_gap"] = adapted_wasserstein(base_coupling, coupling_p, 1.0)
            if config.problem == "mot" and len(config.mu) * len(config.nu) <= 12:
                try:
                    h = hausdorff_mot(
                        LiftedMeasure.from_measure(config.mu),
                        config.nu,
                        LiftedMeasure.from_measure(mu_p),
                        nu_p,
                    )
                    row["hausdorff_lower"] = h["lower"]
                    row["hausdorff_upper"] = h["upper"]
                except DimensionGuardError:
                    pass
            if config.problem == "shadow":
                exceed, tv = _barrier_exceedance(
                    base_coupling, coupling_p, config.barrier_threshold
                )
                row["barrier_exceedance"] = exceed
                row["kernel_tv"] = tv
            row["status"] = "ok"
            row["reason"] = ""
        except (ConvexOrderError, RuntimeError, ValueError, AssertionError) as exc:
            row["status"] = "error"
            row["reason"] = f"{type(exc).__name__}: {exc}"
        if config.include_timings:
            row["time_s"] = time.perf_counter() - t0
        rows.append(row)
    return StabilityReport(SCHEMA_VERSION, config.problem, config.perturbation, config.seed, rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit(report: StabilityReport, fmt: str) -> str:
    """Serialize a report; floats use repr so values round-trip exactly."""
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(ROW_FIELDS)
        for row in report.rows:
            writer.writerow([_fmt(row[f]) for f in ROW_FIELDS])
        return buf.getvalue()
    if fmt == "plotdata":
        curves: dict[str, list] = {}
        for key in ("value_gap", "aw_gap", "w1_nu", "barrier_exceedance"):
            series = [
                [row["scale"], row[key]]
                for row in report.rows
                if row["status"] == "ok" and row[key] is not None
            ]
            if series:
                curves[key] = series
        return json.dumps(curves, sort_keys=True, indent=2) + "\n"
    raise ConfigError(f"unknown format {fmt!r}")


def report_from_csv(text: str) -> list:
    """Rows parsed back from a CSV emission (floats restored exactly)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    rows = []
    for rec in reader:
        row = {}
        for key, val in zip(header, rec):
            if val == "":
                row[key] = None
            elif key in ("status", "reason"):
                row[key] = val
            else:
                row[key] = float(val)
        rows.append(row)
    return rows
