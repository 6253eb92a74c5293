"""LP solvers for martingale transport problems on the line.

Covers plain and information-lifted martingale optimal transport,
convex kernel costs by Frank-Wolfe, two-period American option pricing,
a two-sided VIX subreplication sandwich with its dual certificate, and
shadow couplings with barrier-map extraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .convex_order import ConvexOrderError, binary_kernel
from .couplings import DiscreteCoupling, coupling_from_plan, martingale_polytope_lp
from .lp_core import LinearProgram, solve_lp
from .measures import DiscreteMeasure, LiftedMeasure, check_convex_order

MAX_FW_ITER = 500


@dataclass
class CostSpec:
    """Integrand cost c(x, u, y), optionally with a kernel-level functional.

    ``fn(x, u, ys)`` returns the per-y cost row.  For convex minimization
    over kernels, ``kernel_cost(x, u, ys, k)`` evaluates C(x, u, rho) on a
    kernel weight vector k and ``kernel_grad`` returns its per-y
    derivative; the gradient is validated against finite differences.
    """

    fn: Optional[Callable] = None
    kernel_cost: Optional[Callable] = None
    kernel_grad: Optional[Callable] = None

    @staticmethod
    def from_function(f: Callable) -> "CostSpec":
        return CostSpec(fn=f)

    @staticmethod
    def tabulated(xs, us, ys, values) -> "CostSpec":
        xs = np.asarray(xs, dtype=float)
        us = np.asarray(us, dtype=float)
        ys = np.asarray(ys, dtype=float)
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite tabulated cost")

        def f(x, u, y):
            i = int(np.argmin(np.abs(xs - x)))
            j = int(np.argmin(np.abs(us - u)))
            k = np.searchsorted(ys, np.atleast_1d(y))
            return values[i, j, np.clip(k, 0, ys.size - 1)]

        return CostSpec(fn=f)


@dataclass(frozen=True)
class BarrierMaps:
    """Per-atom barrier pair (T1, T2) with T1 <= x <= T2."""

    atoms: np.ndarray  # (n, 2) of (x, u)
    weights: np.ndarray
    t1: np.ndarray
    t2: np.ndarray


def _require_order(mu: DiscreteMeasure, nu: DiscreteMeasure):
    ok, witness = check_convex_order(mu, nu)
    if not ok:
        raise ConvexOrderError("marginals are not in convex order", witness)


def _cost_matrix(mu_bar: LiftedMeasure, ys: np.ndarray, cost: CostSpec) -> np.ndarray:
    rows = [np.asarray(cost.fn(x, u, ys), dtype=float) for x, u in mu_bar.atoms]
    return np.array(rows).reshape(len(mu_bar), ys.size)


def solve_extended_mot(mu_bar: LiftedMeasure, nu: DiscreteMeasure, cost: CostSpec, sense: str = "min"):
    """Linear martingale transport over the lifted polytope Pi_M(mu_bar, nu)."""
    _require_order(mu_bar.x_marginal(), nu)
    C = _cost_matrix(mu_bar, nu.atoms, cost)
    lp = martingale_polytope_lp(mu_bar, nu, cost=C)
    lp.sense = sense
    sol = solve_lp(lp)
    if not sol.optimal:
        raise RuntimeError(f"martingale transport LP: {sol.status}")
    return {"value": sol.value, "coupling": coupling_from_plan(mu_bar, nu, sol.x)}


def solve_mot(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: CostSpec, sense: str = "min"):
    """Martingale optimal transport between plain measures on the line."""
    return solve_extended_mot(LiftedMeasure.from_measure(mu), nu, cost, sense)


def _golden_section(f, lo: float = 0.0, hi: float = 1.0, tol: float = 1e-10) -> float:
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def solve_wmot_fw(
    mu_bar: LiftedMeasure,
    nu: DiscreteMeasure,
    cost: CostSpec,
    tol: float = 1e-8,
    max_iter: int = MAX_FW_ITER,
):
    """Convex kernel-cost martingale transport by Frank-Wolfe.

    Minimizes sum_i w_i C(x_i, u_i, K_i) over kernels K of couplings in
    Pi_M(mu_bar, nu).  The linear minimization oracle is the lifted LP
    with the current gradient as cost; steps use exact golden-section
    line search with a 2/(k+2) fallback.  Stops when the Frank-Wolfe gap
    certificate drops below ``tol``.
    """
    _require_order(mu_bar.x_marginal(), nu)
    ys = nu.atoms
    w = mu_bar.weights

    def objective(plan):
        K = plan / w[:, None]
        return sum(
            w[i] * cost.kernel_cost(mu_bar.xs[i], mu_bar.us[i], ys, K[i])
            for i in range(len(mu_bar))
        )

    def gradient(plan):
        K = plan / w[:, None]
        return np.array(
            [cost.kernel_grad(mu_bar.xs[i], mu_bar.us[i], ys, K[i]) for i in range(len(mu_bar))]
        )

    lp0 = martingale_polytope_lp(mu_bar, nu)
    sol0 = solve_lp(lp0)
    if not sol0.optimal:
        raise RuntimeError(f"initial feasibility LP: {sol0.status}")
    plan = sol0.x.reshape(len(mu_bar), len(nu))

    _check_gradient(cost, mu_bar, ys, plan / w[:, None])

    fw_gap = np.inf
    for k in range(max_iter):
        G = gradient(plan)
        lmo = solve_lp(martingale_polytope_lp(mu_bar, nu, cost=G))
        if not lmo.optimal:
            raise RuntimeError(f"linear minimization oracle: {lmo.status}")
        S = lmo.x.reshape(plan.shape)
        fw_gap = float(np.sum(G * (plan - S)))
        if fw_gap <= tol:
            break
        D = S - plan
        t = _golden_section(lambda t: objective(plan + t * D))
        if objective(plan + t * D) > objective(plan):
            t = 2.0 / (k + 2.0)
        plan = plan + t * D
    return {
        "value": float(objective(plan)),
        "coupling": coupling_from_plan(mu_bar, nu, plan.ravel()),
        "fw_gap": fw_gap,
        "iterations": k + 1,
    }


def _check_gradient(cost: CostSpec, mu_bar: LiftedMeasure, ys: np.ndarray, K: np.ndarray, h: float = 1e-6):
    """Compare the gradient oracle with central differences; abort on mismatch."""
    i = 0
    g = np.asarray(cost.kernel_grad(mu_bar.xs[i], mu_bar.us[i], ys, K[i]))
    for j in range(min(3, ys.size)):
        e = np.zeros(ys.size)
        e[j] = h
        fd = (
            cost.kernel_cost(mu_bar.xs[i], mu_bar.us[i], ys, K[i] + e)
            - cost.kernel_cost(mu_bar.xs[i], mu_bar.us[i], ys, K[i] - e)
        ) / (2 * h)
        if abs(fd - g[j]) > 1e-4 * max(1.0, abs(g[j])):
            raise ValueError(
                f"gradient oracle disagrees with finite differences at coordinate {j}: "
                f"{g[j]:.8g} vs {fd:.8g}"
            )


def price_american(mu: DiscreteMeasure, nu: DiscreteMeasure, phi1, phi2):
    """Robust price of a two-exercise-date American option.

    ``phi1`` maps x to the early-exercise payoff, ``phi2`` maps (x, y) to
    the late payoff.  The optimal-stopping cost max(phi1(x), E[phi2(x, Y)])
    is a max of two linear functionals of the kernel, so the price is the
    LP over two martingale branches per x atom: branch 1 collects the
    exercised mass (paid phi1), branch 2 the continued mass (paid phi2).
    """
    _require_order(mu, nu)
    n, m = len(mu), len(nu)
    xs, ys = mu.atoms, nu.atoms
    p1 = np.array([float(phi1(x)) for x in xs])
    p2 = np.array([[float(phi2(x, y)) for y in ys] for x in xs])
    nv = 2 * n * m  # branch-major: [pi1 (n*m), pi2 (n*m)]
    c = np.concatenate([np.repeat(p1, m), p2.ravel()])
    A_eq, b_eq = [], []
    for i in range(n):
        row = np.zeros(nv)
        row[i * m : (i + 1) * m] = 1.0
        row[n * m + i * m : n * m + (i + 1) * m] = 1.0
        A_eq.append(row)
        b_eq.append(mu.weights[i])
    for j in range(m):
        row = np.zeros(nv)
        row[j : n * m : m] = 1.0
        row[n * m + j :: m] = 1.0
        A_eq.append(row)
        b_eq.append(nu.weights[j])
    for br in range(2):
        for i in range(n):
            row = np.zeros(nv)
            row[br * n * m + i * m : br * n * m + (i + 1) * m] = ys - xs[i]
            A_eq.append(row)
            b_eq.append(0.0)
    sol = solve_lp(LinearProgram(c=c, A_eq=np.array(A_eq), b_eq=np.array(b_eq), sense="max"))
    if not sol.optimal:
        raise RuntimeError(f"American pricing LP: {sol.status}")
    pi1 = sol.x[: n * m].reshape(n, m)
    pi2 = sol.x[n * m :].reshape(n, m)
    return {
        "value": sol.value,
        "exercise_plan": pi1,
        "continue_plan": pi2,
        "exercise_mass": float(pi1.sum()),
        "continue_mass": float(pi2.sum()),
    }


# -- VIX subreplication ---------------------------------------------------


def _log_contract(xs: np.ndarray, ys: np.ndarray, tau: float) -> np.ndarray:
    """Matrix of l_x(y) = (2 / tau) log(x / y)."""
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("VIX marginals must be supported on (0, inf)")
    return (2.0 / tau) * (np.log(xs)[:, None] - np.log(ys)[None, :])


def vix_bin_edges(mu: DiscreteMeasure, nu: DiscreteMeasure, tau: float, bins: int) -> np.ndarray:
    L = _log_contract(mu.atoms, nu.atoms, tau)
    u_max = float(np.sqrt(max(L.max(), 0.0)))
    return np.linspace(0.0, u_max, bins + 1)


def _vix_bin_lp(mu, nu, tau, edges, objective_edges):
    n, m, nb = len(mu), len(nu), len(edges) - 1
    L = _log_contract(mu.atoms, nu.atoms, tau)
    lo, hi = edges[:-1], edges[1:]
    nv = n * nb * m  # index (i, b, j)

    def var(i, b, j):
        return (i * nb + b) * m + j

    c = np.zeros(nv)
    for i in range(n):
        for b in range(nb):
            c[var(i, b, 0) : var(i, b, m - 1) + 1] = objective_edges[b]
    A_eq, b_eq = [], []
    for i in range(n):
        row = np.zeros(nv)
        row[i * nb * m : (i + 1) * nb * m] = 1.0
        A_eq.append(row)
        b_eq.append(mu.weights[i])
    for j in range(m):
        row = np.zeros(nv)
        row[j::m] = 1.0
        A_eq.append(row)
        b_eq.append(nu.weights[j])
    for i in range(n):
        for b in range(nb):
            row = np.zeros(nv)
            row[var(i, b, 0) : var(i, b, m - 1) + 1] = nu.atoms - mu.atoms[i]
            A_eq.append(row)
            b_eq.append(0.0)
    A_ub, b_ub = [], []
    for i in range(n):
        for b in range(nb):
            low = np.zeros(nv)
            low[var(i, b, 0) : var(i, b, m - 1) + 1] = lo[b] ** 2 - L[i]
            A_ub.append(low)
            b_ub.append(0.0)
            high = np.zeros(nv)
            high[var(i, b, 0) : var(i, b, m - 1) + 1] = L[i] - hi[b] ** 2
            A_ub.append(high)
            b_ub.append(0.0)
    return LinearProgram(c=c, A_eq=np.array(A_eq), b_eq=np.array(b_eq), A_ub=np.array(A_ub), b_ub=np.array(b_ub))


def vix_dual_lp(mu: DiscreteMeasure, nu: DiscreteMeasure, tau: float, bins: int):
    """Two-sided bracket of the VIX subreplication dual value.

    The information label is the future VIX level u with the constraint
    that the conditional log-contract moment equals u^2.  Binning u into
    intervals relaxes the equality to the bin's square range; pricing the
    label at the lower (resp. upper) bin edge gives d_lo <= D_sub <= d_hi
    with gap at most one bin width.
    """
    _require_order(mu, nu)
    edges = vix_bin_edges(mu, nu, tau, bins)
    sol_lo = solve_lp(_vix_bin_lp(mu, nu, tau, edges, edges[:-1]))
    sol_hi = solve_lp(_vix_bin_lp(mu, nu, tau, edges, edges[1:]))
    if not (sol_lo.optimal and sol_hi.optimal):
        raise RuntimeError("VIX bin LP failed")
    nb, m = len(edges) - 1, len(nu)
    plan = sol_lo.x.reshape(len(mu), nb, m)
    mids = 0.5 * (edges[:-1] + edges[1:])
    table = [
        (float(mu.atoms[i]), float(mids[b]), float(nu.atoms[j]), float(plan[i, b, j]))
        for i in range(len(mu))
        for b in range(nb)
        for j in range(m)
        if plan[i, b, j] > 1e-14
    ]
    from .couplings import disintegrate

    coupling, _ = disintegrate(table)
    return {"d_lo": sol_lo.value, "d_hi": sol_hi.value, "edges": edges, "coupling": coupling}


def vix_primal_lp(mu: DiscreteMeasure, nu: DiscreteMeasure, tau: float, u_grid: np.ndarray):
    """Subreplicating-portfolio LP certificate for the VIX lower bound.

    ``u_grid`` holds the bin edges of the matching ``vix_dual_lp`` call.
    Maximizes mu(phi) + nu(psi) over static positions phi, psi, per-bin
    stock deltas Delta_S and nonnegative log-contract positions alpha,
    beta (net log delta Delta_L = alpha - beta) subject to the
    subreplication constraint at every (x, bin, y).  This is the exact LP
    dual of the lower-edge bin LP, so the value equals d_lo.
    """
    edges = np.asarray(u_grid, dtype=float)
    n, m, nb = len(mu), len(nu), edges.size - 1
    L = _log_contract(mu.atoms, nu.atoms, tau)
    lo, hi = edges[:-1], edges[1:]
    # variables: phi (n, free), psi (m, free), delta (n*nb, free),
    #            alpha (n*nb, >=0), beta (n*nb, >=0)
    nv = n + m + 3 * n * nb
    c = np.zeros(nv)
    c[:n] = mu.weights
    c[n : n + m] = nu.weights
    A_ub, b_ub = [], []
    for i in range(n):
        for b in range(nb):
            for j in range(m):
                row = np.zeros(nv)
                row[i] = 1.0
                row[n + j] = 1.0
                row[n + m + i * nb + b] = nu.atoms[j] - mu.atoms[i]
                row[n + m + n * nb + i * nb + b] = L[i, j] - lo[b] ** 2
                row[n + m + 2 * n * nb + i * nb + b] = hi[b] ** 2 - L[i, j]
                A_ub.append(row)
                b_ub.append(lo[b])
    bounds = [(None, None)] * (n + m + n * nb) + [(0, None)] * (2 * n * nb)
    sol = solve_lp(
        LinearProgram(c=c, A_ub=np.array(A_ub), b_ub=np.array(b_ub), bounds=bounds, sense="max")
    )
    if not sol.optimal:
        raise RuntimeError(f"VIX subreplication LP: {sol.status}")
    alpha = sol.x[n + m + n * nb : n + m + 2 * n * nb]
    beta = sol.x[n + m + 2 * n * nb :]
    return {
        "p_value": sol.value,
        "phi": sol.x[:n],
        "psi": sol.x[n : n + m],
        "delta_s": sol.x[n + m : n + m + n * nb].reshape(n, nb),
        "delta_l": (alpha - beta).reshape(n, nb),
    }


# -- shadow couplings -----------------------------------------------------


def shadow_cost() -> CostSpec:
    return CostSpec(fn=lambda x, u, ys: (1.0 - u) * np.sqrt(1.0 + np.asarray(ys) ** 2))


def shadow_coupling(mu_bar: LiftedMeasure, nu: DiscreteMeasure):
    """Lifted martingale coupling minimizing (1 - u) sqrt(1 + y^2)."""
    if np.any(mu_bar.us < -1e-12) or np.any(mu_bar.us > 1 + 1e-12):
        raise ValueError("shadow coupling needs u-labels in [0, 1]")
    return solve_extended_mot(mu_bar, nu, shadow_cost(), sense="min")


def extract_barriers(c: DiscreteCoupling, tol: float = 1e-10):
    """Barrier maps of a vertex coupling with at-most-binary kernels.

    Kernels supported on one point give T1 = T2 = x; on two points the
    support endpoints.  Kernels with larger support are excluded and
    reported in the diagnostics with their count and carried mass.
    """
    atoms, weights, t1, t2 = [], [], [], []
    excluded = 0
    excluded_mass = 0.0
    for i in range(len(c.first_marginal)):
        supp = c.y_support[c.kernels[i] > tol]
        x = c.first_marginal.xs[i]
        if supp.size > 2:
            excluded += 1
            excluded_mass += float(c.first_marginal.weights[i])
            continue
        if supp.size == 1:
            lo = hi = x
        else:
            lo, hi = float(supp[0]), float(supp[1])
        atoms.append(c.first_marginal.atoms[i])
        weights.append(c.first_marginal.weights[i])
        t1.append(lo)
        t2.append(hi)
    bm = BarrierMaps(np.array(atoms).reshape(-1, 2), np.array(weights), np.array(t1), np.array(t2))
    return bm, {"excluded_count": excluded, "excluded_mass": excluded_mass}


def barrier_monotonicity_violation(bm: BarrierMaps, tol: float = 1e-9) -> float:
    """Mass violating the nesting T1 nonincreasing / T2 nondecreasing in u.

    For each x and each adjacent label pair v < u the intervals
    [T1(x, v), T2(x, v)] must sit inside [T1(x, u), T2(x, u)].
    """
    bad = 0.0
    for x in np.unique(bm.atoms[:, 0]):
        idx = np.where(bm.atoms[:, 0] == x)[0]
        idx = idx[np.argsort(bm.atoms[idx, 1])]
        for a, b in zip(idx[:-1], idx[1:]):
            # label at b is larger: its interval must contain the one at a
            if bm.t1[b] > bm.t1[a] + tol or bm.t2[b] < bm.t2[a] - tol:
                bad += float(bm.weights[b])
    return bad


def left_monotone_violation(c: DiscreteCoupling, tol: float = 1e-10) -> float:
    """Mass breaking the left-monotone support pattern of proj_{1,3}.

    A violation is a point y' of the kernel at x' landing strictly
    between two support points of the kernel at some x < x'.
    """
    flat = c.proj13()
    xs = flat.first_marginal.xs
    bad = 0.0
    for i2 in range(len(xs)):
        for j, y in enumerate(flat.y_support):
            if flat.kernels[i2, j] <= tol:
                continue
            hit = False
            for i1 in range(len(xs)):
                if xs[i1] >= xs[i2] - tol:
                    continue
                supp = flat.y_support[flat.kernels[i1] > tol]
                if supp.size >= 2 and supp[0] + tol < y < supp[-1] - tol and not np.any(np.abs(supp - y) <= tol):
                    hit = True
                    break
            if hit:
                bad += float(flat.first_marginal.weights[i2] * flat.kernels[i2, j])
    return bad


def copula_lift(mu: DiscreteMeasure, copula: str = "independence", m: int = 1, table=None) -> LiftedMeasure:
    """Attach information labels to mu through a copula on [0,1]^2.

    The label axis is discretized into m cells with mid-point labels
    (i - 1/2)/m.  The first copula coordinate is pushed through the
    quantile function of mu, so the x-marginal of the lift is mu exactly.
    ``hoeffding_frechet`` is the comonotone copula (diagonal cells),
    ``independence`` the product; ``tabulated`` takes an m-by-m cell-mass
    matrix whose rows must each sum to 1/m.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    from .measures import QuantileView

    mass = mu.mass
    if copula == "independence":
        cells = np.full((m, m), 1.0 / (m * m))
    elif copula == "hoeffding_frechet":
        cells = np.eye(m) / m
    elif copula == "tabulated":
        cells = np.asarray(table, dtype=float)
        if cells.shape != (m, m):
            raise ValueError("tabulated copula must be an m-by-m matrix")
        if np.any(np.abs(cells.sum(axis=1) - 1.0 / m) > 1e-9):
            raise ValueError("tabulated copula rows must sum to 1/m")
    else:
        raise ValueError(f"unknown copula {copula!r}")
    qv = QuantileView(mu)
    out: Optional[LiftedMeasure] = None
    for i in range(m):
        piece = qv.cell_restriction(i * mass / m, (i + 1) * mass / m)
        for k in range(m):
            if cells[i, k] <= 0:
                continue
            lift = LiftedMeasure.from_measure(piece.scaled(m * cells[i, k]), (k + 0.5) / m)
            out = lift if out is None else out + lift
    return out
