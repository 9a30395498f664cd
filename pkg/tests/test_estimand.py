"""Estimand weights: zero-sum structure, contamination, and per-period tables."""

import numpy as np
import pytest

from idweights import (
    Design,
    Population,
    TreatmentSet,
    build_template,
    contamination_decomposition,
    implicit_estimand,
    population_gram,
    potential_weights,
    solve_implicit_design,
    twfe_weights,
)

from conftest import three_arm_population


def _binary_fixture(n=20):
    x = np.linspace(0.05, 0.95, n)[:, None]
    pi = 0.2 + 0.5 * x[:, 0]
    pop = Population(x, (pi > 0.5).astype(int), np.zeros((n, 1)))
    ts = TreatmentSet.binary()
    design = Design(np.column_stack([1 - pi, pi]), kind="true")
    spec = build_template("angrist", {}, pop, ts, design)
    pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
    return pop, ts, design, pws


class TestBinary:
    def test_zero_sum_and_antisymmetry(self):
        _, _, _, pws = _binary_fixture()
        report = solve_implicit_design(pws)
        est = report.estimand
        assert est.zero_sum_gap < 1e-12
        assert np.allclose(est.omega[:, 1], -est.omega[:, 0])
        assert est.wate == pytest.approx(est.omega[:, 1, 0, 0])

    def test_wate_mean_is_one_at_the_implicit_design(self):
        # Feeding y_i(w) = w through the estimand returns the regression
        # coefficient of w on itself: exactly one.
        _, _, _, pws = _binary_fixture()
        est = solve_implicit_design(pws).estimand
        assert est.wate_mean == pytest.approx(1.0, abs=1e-12)

    def test_wate_form_is_variance_weighting(self):
        _, _, design, pws = _binary_fixture()
        est = solve_implicit_design(pws).estimand
        pi = design.probs[:, 1]
        v = pi * (1 - pi)
        assert est.wate == pytest.approx(v / v.mean(), abs=1e-10)

    def test_estimand_value_weights_unit_effects(self, rng):
        _, ts, _, pws = _binary_fixture()
        est = solve_implicit_design(pws).estimand
        n = est.n
        base = rng.normal(size=n)
        effect = rng.normal(size=n)
        y = np.stack([base, base + effect], axis=1)[:, :, None]  # (n, 2, 1)
        # Baselines cancel by the zero-sum identity.
        assert est.estimand_value(y)[0] == pytest.approx(
            float(np.mean(est.wate * effect)), abs=1e-10
        )

    def test_arbitrary_design_breaks_zero_sum(self):
        _, _, _, pws = _binary_fixture()
        uniform = Design(np.full((pws.n, 2), 0.5), kind="candidate")
        est = implicit_estimand(uniform, pws)
        assert est.zero_sum_gap > 1e-3

    def test_shape_mismatch_rejected(self):
        _, _, _, pws = _binary_fixture()
        short = Design(np.full((3, 2), 0.5), kind="candidate")
        with pytest.raises(ValueError, match="disagree"):
            implicit_estimand(short, pws)


class TestThreeArmProgram:
    """Two covariate groups, three arms, known exact weight tables."""

    def _estimand(self, copies=1):
        pop, ts, design = three_arm_population(copies)
        spec = build_template("multivalued", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
        report = solve_implicit_design(pws)
        assert report.verdict == "tenable"
        return report.estimand

    def test_exact_weight_tables(self):
        est = self._estimand()
        onesixth = 1.0 / 106.0
        expected = {
            (0, 0): (-140, 41, 99),
            (1, 0): (-72, 171, -99),
            (0, 1): (-160, 9, 151),
            (1, 1): (-52, -9, 61),
        }
        for (i, k), nums in expected.items():
            assert est.omega[i, :, k, 0] == pytest.approx(
                np.array(nums) * onesixth, abs=1e-12
            )

    def test_contamination_mass(self):
        est = self._estimand()
        # Contrast 0 leaks 99/106 of absolute mass onto arm 2; contrast 1
        # leaks 9/106 onto arm 1.
        assert est.contamination_mass == pytest.approx(
            [99 / 106, 9 / 106], abs=1e-12
        )
        assert est.contamination[0, 2] == pytest.approx(99 / 106, abs=1e-12)
        assert est.contamination[1, 1] == pytest.approx(9 / 106, abs=1e-12)

    def test_negative_cells_flagged(self):
        est = self._estimand()
        flagged = {(i, j, r): v for i, j, r, t, v in est.negativity}
        assert flagged[(1, 2, 0)] == pytest.approx(-99 / 106, abs=1e-12)
        assert flagged[(1, 1, 1)] == pytest.approx(-9 / 106, abs=1e-12)
        assert len(est.negativity) == 2

    def test_decomposition_reproduces_estimand(self, rng):
        est = self._estimand(copies=3)
        pop, ts, _ = three_arm_population(copies=3)
        table = contamination_decomposition(est, pop.covariates)
        assert table.within_group_constant
        effects = {(0.0,): rng.normal(size=2), (1.0,): rng.normal(size=2)}
        tau = table.evaluate(effects)
        base = rng.normal(size=est.n)
        y = np.zeros((est.n, 3, 1))
        y[:, 0, 0] = base
        for arm in (1, 2):
            for i in range(est.n):
                key = (pop.covariates[i, 0],)
                y[i, arm, 0] = base[i] + effects[key][arm - 1]
        assert est.estimand_value(y) == pytest.approx(tau, abs=1e-10)

    def test_decomposition_coefficients(self):
        est = self._estimand()
        table = contamination_decomposition(est, np.array([[0.0], [1.0]]))
        # coefficient = group share x mean omega on that arm.
        assert table.coefficient((0.0,), 0, 1) == pytest.approx(0.5 * 41 / 106)
        assert table.coefficient((1.0,), 0, 2) == pytest.approx(-0.5 * 99 / 106)
        with pytest.raises(KeyError):
            table.coefficient((2.0,), 0, 1)


class TestTwfeWeights:
    def test_single_adoption_cohort_has_no_forbidden_cells(self):
        ts = TreatmentSet(values=np.array([[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]]))
        design = Design(np.tile([0.6, 0.4], (4, 1)), kind="true")
        table = twfe_weights(design, ts)
        assert table.weights[1, 2] == pytest.approx(0.5)
        assert table.weights[1, 3] == pytest.approx(0.5)
        assert table.forbidden == []
        assert not table.has_forbidden_comparisons

    def test_early_cohort_end_period_weight_is_negative(self):
        ts = TreatmentSet(values=np.array([[0.0, 1.0, 1.0], [0.0, 0.0, 1.0]]))
        design = Design(np.tile([0.5, 0.5], (4, 1)), kind="true")
        table = twfe_weights(design, ts)
        assert table.weights[0, 2] == pytest.approx(-0.5)
        assert table.forbidden == [(0, 2)]
        assert table.has_forbidden_comparisons

    def test_weights_average_effects_to_one_on_uniform_adoption(self):
        # Plugging y_t(w) = w_t into the weighted sum returns the
        # coefficient of the treatment indicator on itself.
        ts = TreatmentSet(values=np.array([[0.0, 1.0, 1.0], [0.0, 0.0, 1.0]]))
        design = Design(np.tile([0.5, 0.5], (2, 1)), kind="true")
        table = twfe_weights(design, ts)
        assert float((table.weights * ts.values).sum()) == pytest.approx(1.0)

    def test_requires_constant_design(self):
        ts = TreatmentSet(values=np.array([[0.0, 0.0], [0.0, 1.0]]))
        probs = np.array([[0.5, 0.5], [0.9, 0.1]])
        with pytest.raises(ValueError, match="constant"):
            twfe_weights(Design(probs, kind="true"), ts)

    def test_degenerate_variation_rejected(self):
        ts = TreatmentSet(values=np.array([[0.0, 0.0], [0.0, 1.0]]))
        probs = np.tile([1.0, 0.0], (3, 1))  # all mass on the no-treatment path
        with pytest.raises(ValueError, match="degenerate"):
            twfe_weights(Design(probs, kind="true"), ts)
