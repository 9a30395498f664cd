"""Per-unit level-irrelevance solves: statuses, verdicts, and the binary shortcut."""

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idweights import (
    Design,
    Population,
    PotentialWeightSet,
    SolverOptions,
    TreatmentSet,
    binary_closed_form,
    build_template,
    check_candidate_design,
    population_gram,
    potential_weights,
    solve_implicit_design,
)
from idweights.solver import design_to_csv

from conftest import make_binary_population, solve_template


def _linear_pi_population(n=20):
    """Target design linear in a single covariate: the implicit design of the
    treatment-plus-linear-controls regression is the target itself."""
    x = np.linspace(0.05, 0.95, n)[:, None]
    pi = 0.2 + 0.5 * x[:, 0]
    pop = Population(x, (pi > 0.5).astype(int), np.zeros((n, 1)))
    design = Design(np.column_stack([1 - pi, pi]), kind="true")
    return pop, TreatmentSet.binary(), design


class TestVerdicts:
    def test_linear_target_is_tenable_fixed_point(self):
        pop, ts, design = _linear_pi_population()
        report = solve_template("angrist", {}, pop, ts, design)
        assert report.verdict == "tenable"
        assert report.gram_consistent
        assert np.abs(report.design.probs - design.probs).max() < 1e-12
        assert report.status_counts() == {"unique": pop.n}
        assert report.estimand is not None

    def test_convex_target_is_improper(self):
        # The linear projection of a convex pi* dips below zero near x = 0.
        n = 20
        x = np.linspace(0.05, 0.95, n)[:, None]
        pi = 0.05 + 0.9 * x[:, 0] ** 2
        pop = Population(x, (pi > 0.5).astype(int), np.zeros((n, 1)))
        design = Design(np.column_stack([1 - pi, pi]), kind="true")
        report = solve_template("angrist", {}, pop, TreatmentSet.binary(), design)
        assert report.verdict == "improper"
        assert report.design.probs.min() < 0
        assert any(not u.proper for u in report.per_unit)

    def test_equal_nonzero_weights_have_no_solution(self, rng):
        pop, ts, design = make_binary_population(rng, 8)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
        rho = pws.rho.copy()
        rho[2, 1] = rho[2, 0]  # pi rho1 + (1-pi) rho0 = rho0 != 0 for all pi
        broken = PotentialWeightSet(rho, pws.gram, pws.mode, spec, pop, ts)
        report = solve_implicit_design(broken)
        assert report.verdict == "nonexistent"
        assert report.design is None
        assert report.estimand is None
        assert report.per_unit[2].status == "none"
        assert report.per_unit[2].design_row is None

    def test_zero_weight_unit_is_unconstrained(self, rng):
        pop, ts, design = make_binary_population(rng, 8)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
        rho = pws.rho.copy()
        rho[4] = 0.0
        report = solve_implicit_design(
            PotentialWeightSet(rho, pws.gram, pws.mode, spec, pop, ts)
        )
        unit = report.per_unit[4]
        assert unit.status == "unconstrained"
        assert unit.design_row == pytest.approx([0.5, 0.5])
        assert unit.proper

    def test_staggered_paths_underdetermined_with_proper_point(self):
        # Four adoption paths over three periods: one redundant level
        # equation leaves a one-dimensional solution set per unit.
        values = np.array(
            [[0, 0, 0], [0, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=float
        )
        ts = TreatmentSet(values=values)
        n = 8
        pibar = np.array([0.4, 0.2, 0.2, 0.2])
        pop = Population(np.zeros((n, 1)), np.tile(np.arange(4), 2), np.zeros((n, 3)))
        design = Design(np.tile(pibar, (n, 1)), kind="true")
        report = solve_template("twfe", {}, pop, ts, design)
        assert report.status_counts() == {"underdetermined": n}
        for unit in report.per_unit:
            assert unit.proper
            assert unit.nullspace.shape == (4, 1)
            assert unit.design_row.sum() == pytest.approx(1.0)
            assert unit.design_row.min() >= -1e-9
        # Any solution of the level system reproduces the fixed-effects Gram.
        assert report.verdict == "tenable"

    def test_report_json_dict(self):
        pop, ts, design = _linear_pi_population(10)
        report = solve_template("angrist", {}, pop, ts, design)
        blob = report.to_json_dict()
        assert blob["verdict"] == "tenable"
        assert blob["status_counts"] == {"unique": 10}
        assert blob["improper_units"] == 0
        assert blob["max_residual"] <= 1e-12


class TestBinaryClosedForm:
    def test_formula(self, rng):
        pop, ts, design = make_binary_population(rng, 12)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
        report = binary_closed_form(pws)
        rho0 = pws.rho[:, 0, 0, 0]
        rho1 = pws.rho[:, 1, 0, 0]
        assert report.design.probs[:, 1] == pytest.approx(-rho0 / (rho1 - rho0))

    def test_rejects_non_binary(self):
        values = np.array([[0.0], [1.0], [2.0]])
        ts = TreatmentSet(values=values)
        n = 6
        x = np.linspace(-1, 1, n)[:, None]
        pop = Population(x, np.zeros(n, dtype=int), np.zeros((n, 1)))
        design = Design(np.full((n, 3), 1 / 3), kind="true")
        spec = build_template("multivalued", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
        with pytest.raises(ValueError, match="binary"):
            binary_closed_form(pws)

    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(5, 30), seed=st.integers(0, 10**6))
    def test_agrees_with_generic_solver(self, n, seed):
        rng = np.random.default_rng(seed)
        pop, ts, design = make_binary_population(rng, n)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
        fast = binary_closed_form(pws)
        slow = solve_implicit_design(pws)
        assert fast.verdict == slow.verdict
        if fast.design is not None:
            assert np.abs(fast.design.probs - slow.design.probs).max() < 1e-9
        for a, b in zip(fast.per_unit, slow.per_unit):
            assert a.proper == b.proper


class TestMembership:
    def test_target_design_is_admissible(self):
        pop, ts, design = _linear_pi_population()
        spec = build_template("angrist", {}, pop, ts, design)
        gram = population_gram(spec, pop, ts, design)
        report = check_candidate_design(design, spec, pop, ts, 1e-8, gram)
        assert report.admissible
        assert report.level_irrelevance_residual < 1e-12
        assert report.min_entry > 0

    def test_nonlinear_candidate_fails_level_irrelevance(self):
        # A candidate that is linear in x is always the implicit design of
        # its own Gram; breaking linearity at two units breaks membership.
        pop, ts, design = _linear_pi_population()
        spec = build_template("angrist", {}, pop, ts, design)
        gram = population_gram(spec, pop, ts, design)
        pi = design.probs[:, 1].copy()
        pi[0] += 0.3
        pi[1] -= 0.15
        bad = Design(np.column_stack([1 - pi, pi]), kind="candidate")
        report = check_candidate_design(bad, spec, pop, ts, np.inf, gram)
        assert not report.level_irrelevance_pass
        assert not report.admissible

    def test_gram_band_controls_pass(self):
        pop, ts, design = _linear_pi_population()
        spec = build_template("angrist", {}, pop, ts, design)
        pi = design.probs[:, 1]
        other = Design(np.column_stack([pi, 1 - pi]), kind="candidate")
        gram_other = population_gram(spec, pop, ts, other, source="candidate")
        report_tight = check_candidate_design(design, spec, pop, ts, 1e-10, gram_other)
        assert not report_tight.gram_pass
        report_wide = check_candidate_design(design, spec, pop, ts, 10.0, gram_other)
        assert report_wide.gram_pass
        assert report_wide.gram_worst_gap <= 0

    def test_improper_candidate_flagged(self):
        pop, ts, design = _linear_pi_population()
        spec = build_template("angrist", {}, pop, ts, design)
        gram = population_gram(spec, pop, ts, design)
        probs = design.probs.copy()
        probs[0] = (1.02, -0.02)
        bad = Design(probs, kind="candidate")
        report = check_candidate_design(bad, spec, pop, ts, np.inf, gram)
        assert not report.proper_pass
        assert report.min_entry == pytest.approx(-0.02)

    def test_json_dict_round_trip(self):
        pop, ts, design = _linear_pi_population()
        spec = build_template("angrist", {}, pop, ts, design)
        gram = population_gram(spec, pop, ts, design)
        blob = check_candidate_design(design, spec, pop, ts, 1e-8, gram).to_json_dict()
        assert blob["admissible"]
        assert set(blob) == {"level_irrelevance", "proper", "gram", "admissible"}


def test_design_csv_round_trip(tmp_path):
    pop, ts, design = _linear_pi_population(6)
    report = solve_template("angrist", {}, pop, ts, design)
    path = tmp_path / "design.csv"
    design_to_csv(report, ts, str(path))
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 * 2
    arm = {"control": 0, "treated": 1}
    for row in rows:
        i = int(row["unit"])
        assert float(row["pi"]) == report.design.probs[i, arm[row["w"]]]


def test_strict_options_tighten_gram_band():
    opts = SolverOptions(gram_rtol_population=1e-12)
    assert opts.gram_tolerance("population", 100) == 1e-12
    default = SolverOptions()
    # Estimated-mode band widens with small n.
    assert default.gram_tolerance("estimated", 4) == pytest.approx(5.0)
    assert default.gram_tolerance("estimated", 10**14) == pytest.approx(1e-6)
