"""Closed-form designs cross-validated against the generic solver, plus
existence conditions for the panel and interaction forms."""

import numpy as np
import pytest

from idweights import (
    Design,
    Population,
    TreatmentSet,
    angrist_design,
    build_template,
    event_study_design,
    forbidden_interaction_check,
    fractional_linear_design,
    interacted_t_design,
    kline_design,
    multivalued_design,
    owfe_check,
    population_gram,
    potential_weights,
    saturated_interacted_design,
    transplanted_ate_residual,
    twfe_covariate_condition,
    twfe_design,
    unbalanced_twfe_condition,
)

from conftest import make_binary_population, solve_template, three_arm_population


class TestAngrist:
    def test_linear_target_is_its_own_design(self):
        n = 16
        x = np.linspace(0.0, 1.0, n)[:, None]
        pi = 0.2 + 0.5 * x[:, 0]
        pop = Population(x, (pi > 0.5).astype(int), np.zeros((n, 1)))
        design = Design(np.column_stack([1 - pi, pi]), kind="true")
        res = angrist_design(pop, design=design)
        assert res.exists
        assert res.estimand_form == "WATE_variance"
        assert np.abs(res.design.probs - design.probs).max() < 1e-12
        assert res.parameters["delta"] == pytest.approx([0.2, 0.5])
        assert res.condition("gram_consistency").passed
        v = pi * (1 - pi)
        assert res.estimand_weights == pytest.approx(v / v.mean())

    def test_matches_generic_solver(self, rng):
        pop, ts, design = make_binary_population(rng, 18)
        res = angrist_design(pop, design=design)
        report = solve_template("angrist", {}, pop, ts, design)
        assert np.abs(res.design.probs - report.design.probs).max() < 1e-10

    def test_estimated_mode_projects_point_masses(self, rng):
        pop, ts, design = make_binary_population(rng, 25)
        res = angrist_design(pop, mode="estimated")
        X = np.column_stack([np.ones(pop.n), pop.covariates])
        delta = np.linalg.lstsq(X, pop.observed_treatment.astype(float), rcond=None)[0]
        assert res.parameters["delta"] == pytest.approx(delta)
        assert res.design.probs[:, 1] == pytest.approx(X @ delta)

    def test_improper_projection_noted(self):
        n = 20
        x = np.linspace(0.05, 0.95, n)[:, None]
        pi = 0.05 + 0.9 * x[:, 0] ** 2
        pop = Population(x, (pi > 0.5).astype(int), np.zeros((n, 1)))
        design = Design(np.column_stack([1 - pi, pi]), kind="true")
        res = angrist_design(pop, design=design)
        assert res.proper is False
        assert not res.condition("proper").passed
        assert any("improper" in note for note in res.notes)


class TestMultivalued:
    def test_matches_generic_solver_exactly(self):
        pop, ts, design = three_arm_population(copies=2)
        res = multivalued_design(pop, ts, design=design)
        report = solve_template("multivalued", {}, pop, ts, design)
        assert report.verdict == "tenable"
        assert np.abs(res.design.probs - report.design.probs).max() < 1e-12
        assert res.estimand_form == "contaminated"

    def test_rejects_panels(self):
        ts = TreatmentSet(values=np.array([[0.0, 0.0], [0.0, 1.0]]))
        pop = Population(np.zeros((4, 1)), np.zeros(4, dtype=int), np.zeros((4, 2)))
        with pytest.raises(ValueError, match="cross-sectional"):
            multivalued_design(pop, ts)


class TestSaturatedInteracted:
    def _discrete_population(self, rng):
        cells = np.repeat([0.0, 1.0, 2.0], 6)
        pi = np.select([cells == 0, cells == 1, cells == 2], [0.3, 0.6, 0.45])
        pop = Population(
            cells[:, None], rng.integers(0, 2, cells.size), np.zeros((cells.size, 1))
        )
        design = Design(np.column_stack([1 - pi, pi]), kind="true")
        return pop, design, pi

    def test_within_cell_mean_design(self, rng):
        pop, design, pi = self._discrete_population(rng)
        res = saturated_interacted_design(pop, design=design)
        # pi* is already constant within cells, so the design returns it.
        assert res.design.probs[:, 1] == pytest.approx(pi)
        assert res.estimand_form == "ATE"
        assert res.estimand_weights == pytest.approx(np.ones(pop.n))
        assert res.parameters["cell_shares"] == pytest.approx([0.3, 0.6, 0.45])

    def test_matches_generic_solver(self, rng):
        pop, design, _ = self._discrete_population(rng)
        res = saturated_interacted_design(pop, design=design)
        report = solve_template("saturated_interacted", {}, pop, TreatmentSet.binary(), design)
        assert report.verdict == "tenable"
        assert np.abs(res.design.probs - report.design.probs).max() < 1e-10


class TestKline:
    def test_odds_linear_in_centered_covariates(self, rng):
        pop, ts, design = make_binary_population(rng, 30, d=2)
        res = kline_design(pop, design=design)
        pi = res.design.probs[:, 1]
        odds = pi / (1 - pi)
        xc = pop.covariates - res.parameters["xbar0"]
        fitted = res.parameters["delta0"] + xc @ res.parameters["delta1"]
        assert odds == pytest.approx(fitted, abs=1e-10)

    def test_att_weights(self, rng):
        pop, ts, design = make_binary_population(rng, 30)
        res = kline_design(pop, design=design)
        pi = res.design.probs[:, 1]
        assert res.estimand_weights == pytest.approx(pi / pi.mean())
        assert res.estimand_form == "ATT"

    def test_matches_generic_solver(self, rng):
        pop, ts, design = make_binary_population(rng, 24)
        res = kline_design(pop, design=design)
        report = solve_template("kline", {}, pop, ts, design)
        assert np.abs(res.design.probs - report.design.probs).max() < 1e-9

    def test_gram_consistency_carries_information(self, rng):
        # Unlike the linear forms, the implied design need not reproduce the
        # target Gram matrix; the check is reported rather than assumed.
        pop, ts, design = make_binary_population(rng, 30)
        res = kline_design(pop, design=design)
        check = res.condition("gram_consistency")
        assert check.slack > 0
        assert any("not automatic" in note for note in res.notes)

    def test_estimated_mode_odds_anchor(self, rng):
        pop, ts, design = make_binary_population(rng, 40)
        res = kline_design(pop, mode="estimated")
        n1 = int(pop.observed_treatment.sum())
        assert res.parameters["delta0"] == pytest.approx(n1 / (pop.n - n1))


class TestInteractedT:
    def _population(self, n=24):
        x = (np.arange(n) / n)[:, None] ** 2
        lin = 1.0 + (x[:, 0] - 0.5) * 0.25
        pi = lin / (1.0 + 2.0 * lin)
        pop = Population(x, (pi > 0.4).astype(int), np.zeros((n, 1)))
        return pop, Design(np.column_stack([1 - pi, pi]), kind="true")

    def test_known_design_fractional_linear_form(self):
        pop, design = self._population()
        res = interacted_t_design(pop, t=None, design=design)
        p = res.parameters
        x = pop.covariates
        num = p["theta0"] + (x - p["xbar"]) @ p["theta1"]
        den = 1.0 - (x - p["xbar_t"]) @ p["gamma2"]
        assert res.design.probs[:, 1] == pytest.approx(num / den, abs=1e-12)
        assert res.estimand_form == "ATE"

    def test_t_one_is_att(self):
        pop, design = self._population()
        res = interacted_t_design(pop, t=1.0, design=design)
        assert res.estimand_form == "ATT"

    def test_fixed_point_is_self_consistent(self):
        pop, _ = self._population(16)
        lin = 1.0 + (pop.covariates[:, 0] - 0.5) * 0.25
        seed = Design(
            np.column_stack([1 - lin / (1 + 2 * lin), lin / (1 + 2 * lin)]),
            kind="candidate",
        )
        res = interacted_t_design(pop, t=None, design=None, seed_design=seed)
        assert res.condition("fixed_point_step").passed
        assert res.condition("fixed_point_gap").passed
        # One more application of the map stays put.
        ts = TreatmentSet.binary()
        current = res.design
        spec = build_template("interacted_t", {"centering": "mean"}, pop, ts, current)
        gram = population_gram(spec, pop, ts, current)
        pws = potential_weights(spec, pop, ts, gram)
        pi_next = -pws.rho[:, 0, 0, 0] / (pws.rho[:, 1, 0, 0] - pws.rho[:, 0, 0, 0])
        assert np.abs(pi_next - current.probs[:, 1]).max() < 1e-9

    def test_estimated_mode_needs_design(self):
        pop, _ = self._population(8)
        with pytest.raises(ValueError, match="estimated mode"):
            interacted_t_design(pop, mode="estimated")


class TestTransplant:
    @staticmethod
    def _nontrivial_fit(n=20):
        # Seed away from the constant design so the iteration lands on the
        # covariate-dependent fixed point.
        x = (np.arange(n) / n)[:, None] ** 3
        pop = Population(x, np.zeros(n, dtype=int), np.zeros((n, 1)))
        lin = 1.0 + (x[:, 0] - 0.5) * 0.25
        pi0 = lin / (1.0 + 2.0 * lin)
        seed = Design(np.column_stack([1 - pi0, pi0]), kind="candidate")
        res = interacted_t_design(pop, t=None, design=None, seed_design=seed)
        assert np.abs(res.parameters["gamma2"]).max() > 1e-4
        return pop, res.parameters

    def test_residual_vanishes_on_the_fitting_population(self):
        pop, p = self._nontrivial_fit()
        resid = transplanted_ate_residual(
            p["theta0"], p["theta1"], p["gamma2"], pop, pop
        )
        assert resid < 1e-9

    def test_residual_appears_on_a_new_population(self):
        pop, p = self._nontrivial_fit()
        n = pop.n
        new_pop = Population(
            (np.arange(n) / n)[:, None], np.zeros(n, dtype=int), np.zeros((n, 1))
        )
        resid = transplanted_ate_residual(
            p["theta0"], p["theta1"], p["gamma2"], pop, new_pop
        )
        assert resid > 1e-3

    def test_fractional_linear_design_centers_at_mean(self):
        x = np.linspace(0.1, 0.9, 7)[:, None]
        dsg = fractional_linear_design(0.4, np.array([0.2]), np.array([0.1]), x)
        c = x.mean()
        expected = (0.4 + (x[:, 0] - c) * 0.2) / (1.0 - (x[:, 0] - c) * 0.1)
        assert dsg.probs[:, 1] == pytest.approx(expected)


class TestForbiddenInteraction:
    def test_binary_controlled_covariate_is_compatible(self):
        x2 = np.repeat([0.0, 1.0], 8)
        x1 = x2.copy()  # deterministic function of the controlled covariate
        pi = np.where(x2 == 0, 0.3, 0.7)
        pop = Population(
            np.column_stack([x1, x2]),
            (pi > 0.5).astype(int),
            np.zeros((x2.size, 1)),
        )
        design = Design(np.column_stack([1 - pi, pi]), kind="true")
        res = forbidden_interaction_check(pop, [0], [1], design=design)
        assert res.exists
        assert res.design is not None
        assert res.condition("projection_identity").passed

    def test_continuous_interaction_is_incompatible(self):
        x2 = np.linspace(0.0, 1.0, 16)
        x1 = 2.0 * x2 + 1.0  # pi-hat * x1 is quadratic in x2: no linear match
        pi = 0.2 + 0.6 * x2
        pop = Population(
            np.column_stack([x1, x2]),
            (pi > 0.5).astype(int),
            np.zeros((x2.size, 1)),
        )
        design = Design(np.column_stack([1 - pi, pi]), kind="true")
        res = forbidden_interaction_check(pop, [0], [1], design=design)
        assert not res.exists
        assert res.design is None
        assert any("no design" in note for note in res.notes)


def _panel_population(values, probs_rows, n_per=3, mask=None):
    values = np.asarray(values, dtype=float)
    ts = TreatmentSet(values=values)
    q = values.shape[0]
    n = q * n_per
    probs = np.tile(probs_rows, (n_per, 1)) if np.ndim(probs_rows) > 1 else np.tile(
        probs_rows, (n, 1)
    )
    pop = Population(
        np.zeros((n, 1)),
        np.tile(np.arange(q), n_per),
        np.zeros((n, values.shape[1])),
        observed_periods=mask,
    )
    return pop, ts, Design(probs, kind="true")


class TestTwfe:
    def test_constant_design_matches_solver(self):
        pop, ts, design = _panel_population(
            [[0, 0, 0], [0, 1, 1]], np.array([0.35, 0.65])
        )
        res = twfe_design(pop, ts, design=design)
        assert np.abs(res.design.probs - 0.5 * (0.35 + 0.65) * 0 - [0.35, 0.65]).max() < 1e-12
        report = solve_template("twfe", {}, pop, ts, design)
        assert report.verdict == "tenable"
        assert np.abs(res.design.probs - report.design.probs).max() < 1e-10
        assert res.condition("gram_consistency").passed

    def test_averages_heterogeneous_target(self):
        rows = np.array([[0.2, 0.8], [0.6, 0.4]])
        pop, ts, design = _panel_population([[0, 0, 0], [0, 1, 1]], rows, n_per=2)
        res = twfe_design(pop, ts, design=design)
        assert res.design.probs[0] == pytest.approx([0.4, 0.6])
        assert res.parameters["pibar"] == pytest.approx([0.4, 0.6])

    def test_forbidden_comparisons_noted(self):
        pop, ts, design = _panel_population(
            [[0, 1, 1], [0, 0, 1]], np.array([0.5, 0.5])
        )
        res = twfe_design(pop, ts, design=design)
        assert any("forbidden" in note for note in res.notes)

    def test_covariate_trend_outside_span_blocks_existence(self):
        ts = TreatmentSet(values=np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
        c = np.linspace(-1, 1, 6)
        xpaths = c[:, None] * np.array([1.0, 2.0, 0.0])[None, :]
        pi1 = 0.5 + 0.3 * c
        pop = Population(np.zeros((6, 1)), np.tile([0, 1], 3), np.zeros((6, 3)))
        design = Design(np.column_stack([1 - pi1, pi1]), kind="true")
        res = twfe_covariate_condition(pop, ts, xpaths, design=design)
        assert not res.exists
        assert res.condition("span_membership").slack > 0.05

    def test_covariate_trend_inside_span_passes(self):
        ts = TreatmentSet(values=np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
        c = np.linspace(-1, 1, 6)
        xpaths = c[:, None] * np.array([0.0, 0.0, 1.0])[None, :]
        pi1 = 0.5 + 0.3 * c
        pop = Population(np.zeros((6, 1)), np.tile([0, 1], 3), np.zeros((6, 3)))
        design = Design(np.column_stack([1 - pi1, pi1]), kind="true")
        res = twfe_covariate_condition(pop, ts, xpaths, design=design)
        assert res.exists
        assert res.condition("span_membership").passed

    def test_orthogonal_trend_recovers_constant_design(self, rng):
        ts = TreatmentSet(values=np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]]))
        pop = Population(np.zeros((6, 1)), np.tile([0, 1, 2], 2), np.zeros((6, 3)))
        design = Design(np.tile([0.5, 0.3, 0.2], (6, 1)), kind="true")
        res = twfe_covariate_condition(pop, ts, rng.normal(size=(6, 3)), design=design)
        assert res.exists
        assert res.design is not None
        assert res.design.probs[0] == pytest.approx([0.5, 0.3, 0.2])


class TestUnbalanced:
    def _setup(self, probs):
        values = np.array([[0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 1.0, 1.0]])
        ts = TreatmentSet(values=values)
        mask = np.ones((10, 4), dtype=bool)
        mask[5:, 3] = False  # second half drops out before the last period
        pop = Population(
            np.zeros((10, 1)),
            np.zeros(10, dtype=int),
            np.zeros((10, 4)),
            observed_periods=mask,
        )
        return pop, ts, Design(probs, kind="true")

    def test_adoption_correlated_missingness_fails(self):
        probs = np.vstack([np.tile([0.7, 0.3], (5, 1)), np.tile([0.3, 0.7], (5, 1))])
        pop, ts, design = self._setup(probs)
        res = unbalanced_twfe_condition(pop, ts, design=design)
        assert not res.exists
        assert not res.condition("missingness_balance").passed
        assert res.design is None

    def test_constant_target_passes(self):
        pop, ts, design = self._setup(np.tile([0.5, 0.5], (10, 1)))
        res = unbalanced_twfe_condition(pop, ts, design=design)
        assert res.exists
        assert res.parameters["per_period_slack"].max() < 1e-12
        assert res.design is not None


class TestOwfe:
    def test_staggered_without_always_treated_fails(self):
        ts = TreatmentSet(values=np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]]))
        res = owfe_check(ts)
        assert not res.exists
        assert res.parameters["constant_span_distance"] == pytest.approx(1.0)

    def test_always_treated_path_restores_necessary_condition(self):
        ts = TreatmentSet(values=np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 1.0], [1.0, 1.0, 1.0]]))
        res = owfe_check(ts)
        assert res.exists
        assert any("necessary only" in note for note in res.notes)


class TestEventStudy:
    def test_uniqueness_via_path_features(self):
        pop, ts, design = _panel_population(
            [[0, 0, 0], [0, 1, 1], [0, 0, 1]], np.array([0.5, 0.3, 0.2])
        )
        res = event_study_design(pop, ts, ts.values, design=design)
        assert res.exists
        assert res.parameters["unique"]
        assert res.design.probs[0] == pytest.approx([0.5, 0.3, 0.2])

    def test_feature_shape_checked(self):
        pop, ts, design = _panel_population(
            [[0, 0, 0], [0, 1, 1]], np.array([0.5, 0.5])
        )
        with pytest.raises(ValueError, match="path features"):
            event_study_design(pop, ts, np.zeros((3, 3)), design=design)
