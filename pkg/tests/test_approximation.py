import numpy as np
import pytest

from emot.approximation import (
    approximate_coupling,
    approximate_pairs,
    min_cost_martingale_rearrangement,
    split_marginals,
)
from emot.convex_order import ConvexOrderError, convex_order_projection
from emot.couplings import (
    DiscreteCoupling,
    adapted_wasserstein,
    check_martingale,
)
from emot.measures import (
    DiscreteMeasure,
    LiftedMeasure,
    check_convex_order,
    mean,
    wasserstein_line,
)
from emot.solvers import CostSpec, solve_mot


def f1_base():
    mu = DiscreteMeasure([-1, 1], [0.5, 0.5])
    nu = DiscreteMeasure([-2, 2], [0.5, 0.5])
    r = solve_mot(mu, nu, CostSpec(fn=lambda x, u, ys: np.abs(np.asarray(ys) - x)))
    return r["coupling"]


def repaired(mu_p, nu_raw):
    """Mean-align nu to mu and repair the convex order."""
    shifted = DiscreteMeasure(nu_raw.atoms - mean(nu_raw) + mean(mu_p), nu_raw.weights)
    return convex_order_projection(mu_p, shifted)


class TestSplitMarginals:
    def test_identity(self):
        pi = f1_base()
        s = split_marginals(pi, pi.first_marginal, pi.second_marginal())
        assert len(s.pieces) == 1
        assert s.stationary_mu_bar is None
        p = s.pieces[0]
        assert p["mu_bar"].mass == pytest.approx(1.0)
        assert wasserstein_line(p["nu"], pi.second_marginal(), 1.0) < 1e-9

    def test_pieces_in_convex_order(self):
        pi = f1_base()
        mu_p = LiftedMeasure.from_measure(DiscreteMeasure([-1.01, 0.99], [0.5, 0.5]))
        nu_p = repaired(mu_p.x_marginal(), DiscreteMeasure([-2.02, 1.98], [0.5, 0.5]))
        s = split_marginals(pi, mu_p, nu_p)
        total_nu = None
        for p in s.pieces:
            ok, _ = check_convex_order(p["mu_bar"].x_marginal(), p["nu"], tol=1e-8)
            assert ok
            total_nu = p["nu"] if total_nu is None else total_nu + p["nu"]
        assert wasserstein_line(total_nu, nu_p, 1.0) < 1e-9

    def test_two_components_mass_split(self):
        mu = DiscreteMeasure([-2, 2], [0.5, 0.5])
        nu = DiscreteMeasure([-3, -1, 1, 3], [0.25, 0.25, 0.25, 0.25])
        pi = solve_mot(mu, nu, CostSpec(fn=lambda x, u, ys: np.abs(np.asarray(ys) - x)))[
            "coupling"
        ]
        mu_p = LiftedMeasure.from_measure(
            DiscreteMeasure([-2.01, 1.99], [0.5, 0.5])
        )
        nu_p = repaired(
            mu_p.x_marginal(), DiscreteMeasure([-3.01, -1.01, 0.99, 2.99], [0.25] * 4)
        )
        s = split_marginals(pi, mu_p, nu_p)
        assert len(s.pieces) == 2
        for p in s.pieces:
            assert p["mu_bar"].mass == pytest.approx(0.5, abs=0.02)

    def test_rejects_bad_order(self):
        pi = f1_base()
        mu_p = LiftedMeasure.from_measure(DiscreteMeasure([-3, 3], [0.5, 0.5]))
        with pytest.raises(ConvexOrderError):
            split_marginals(pi, mu_p, DiscreteMeasure([-2, 2], [0.5, 0.5]))


class TestApproximatePairs:
    def test_unperturbed_single_cell(self):
        mu = DiscreteMeasure([0], [1.0])
        nu = DiscreteMeasure([-1, 1], [0.5, 0.5])
        out, diag = approximate_pairs([mu], [nu], [mu], (-1.0, 1.0), nu, eps=0.05)
        assert len(out) == 1
        total = out[0]
        assert wasserstein_line(total, nu, 1.0) < 1e-9
        ok, _ = check_convex_order(mu, total, tol=1e-8)
        assert ok

    def test_cells_sum_to_target(self):
        mu1 = DiscreteMeasure([-1], [0.5])
        mu2 = DiscreteMeasure([1], [0.5])
        nu1 = DiscreteMeasure([-2, 2], [0.375, 0.125])
        nu2 = DiscreteMeasure([-2, 2], [0.125, 0.375])
        nu_p = DiscreteMeasure([-2.1, 2.1], [0.5, 0.5])
        mu_p1 = DiscreteMeasure([-1.05], [0.5])
        mu_p2 = DiscreteMeasure([1.05], [0.5])
        out, diag = approximate_pairs(
            [mu1, mu2], [nu1, nu2], [mu_p1, mu_p2], (-2.1, 2.1), nu_p, eps=0.05
        )
        total = out[0] + out[1]
        assert wasserstein_line(total, nu_p, 1.0) < 1e-9
        for mu_p, o in zip((mu_p1, mu_p2), out):
            ok, _ = check_convex_order(mu_p, o, tol=1e-8)
            assert ok
        assert diag["step3_cost"] <= diag["step3_bound"] + 1e-9


class TestRearrangement:
    def test_identity(self):
        m = DiscreteMeasure([-1, 1], [0.5, 0.5])
        c, rep = min_cost_martingale_rearrangement(m, m)
        assert rep["cost"] == pytest.approx(0.0, abs=1e-10)

    def test_dirac_to_binary(self):
        theta = DiscreteMeasure([0], [1.0])
        nu = DiscreteMeasure([-1, 1], [0.5, 0.5])
        c, rep = min_cost_martingale_rearrangement(theta, nu)
        assert rep["cost"] == pytest.approx(1.0)
        assert rep["bound"] == pytest.approx(2.0)
        ok, _ = check_martingale(c, tol=1e-9)
        assert ok

    def test_order_violation_raises(self):
        with pytest.raises(ConvexOrderError):
            min_cost_martingale_rearrangement(
                DiscreteMeasure([-1, 1], [0.5, 0.5]), DiscreteMeasure([0], [1.0])
            )

    def test_random_bound_holds(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            n = rng.integers(2, 5)
            theta = DiscreteMeasure(np.sort(rng.uniform(-2, 2, n)), np.full(n, 1 / n))
            spread = rng.uniform(0.1, 1)
            nu = DiscreteMeasure(
                np.concatenate([theta.atoms - spread, theta.atoms + spread]),
                np.full(2 * n, 0.5 / n),
            )
            _, rep = min_cost_martingale_rearrangement(theta, nu)
            assert rep["cost"] <= rep["bound"] + 1e-9


class TestApproximateCoupling:
    def test_identity_short_circuit(self):
        pi = f1_base()
        out, rep = approximate_coupling(pi, pi.first_marginal, pi.second_marginal(), 0.05)
        assert rep["aw1"] == 0.0
        assert out is pi

    def test_dirac_first_marginal(self):
        mb = LiftedMeasure.from_measure(DiscreteMeasure([0], [1.0]))
        pi = DiscreteCoupling(mb, [-1.0, 1.0], [[0.5, 0.5]])
        nu_p = DiscreteMeasure([-1.1, 1.1], [0.5, 0.5])
        out, rep = approximate_coupling(pi, mb, nu_p, 0.05)
        assert wasserstein_line(out.second_marginal(), nu_p, 1.0) < 1e-9
        ok, dev = check_martingale(out, tol=1e-7)
        assert ok, dev
        assert rep["aw1"] <= wasserstein_line(pi.second_marginal(), nu_p, 1.0) + 0.2

    def test_f1_perturbation_marginals_exact(self):
        pi = f1_base()
        delta = 0.05
        mu_p = LiftedMeasure.from_measure(
            DiscreteMeasure([-1 - delta, 1 + delta], [0.5, 0.5])
        )
        nu_p = repaired(
            mu_p.x_marginal(), DiscreteMeasure([-2 - delta, 2 + delta], [0.5, 0.5])
        )
        out, rep = approximate_coupling(pi, mu_p, nu_p, eps=delta)
        fm = out.first_marginal
        assert np.allclose(np.sort(fm.xs), np.sort(mu_p.xs))
        assert wasserstein_line(out.x_marginal(), mu_p.x_marginal(), 1.0) < 1e-9
        assert wasserstein_line(out.second_marginal(), nu_p, 1.0) < 1e-9
        ok, dev = check_martingale(out, tol=1e-7)
        assert ok, dev
        assert rep["aw1"] < 1.0

    def test_aw1_shrinks_with_scale(self):
        pi = f1_base()
        vals = []
        for delta in (0.2, 0.05, 0.0125):
            mu_p = LiftedMeasure.from_measure(
                DiscreteMeasure([-1 - delta, 1 + delta], [0.5, 0.5])
            )
            nu_p = repaired(
                mu_p.x_marginal(),
                DiscreteMeasure([-2 - delta, 2 + delta], [0.5, 0.5]),
            )
            out, rep = approximate_coupling(pi, mu_p, nu_p, eps=delta)
            vals.append(rep["aw1"])
            assert rep["aw1"] == pytest.approx(
                adapted_wasserstein(out, pi, 1.0), abs=1e-10
            )
        assert vals[2] < vals[0]
