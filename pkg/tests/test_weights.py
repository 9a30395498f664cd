"""Potential weights, realized estimator weights, and identification strength."""

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idweights import (
    PotentialWeightSet,
    build_template,
    estimator_weights,
    export_weights_csv,
    identification_strength,
    point_estimate,
    population_gram,
    potential_weights,
    sample_gram,
)

from conftest import make_binary_population


class TestPotentialWeights:
    def test_shape_and_mode(self, rng):
        pop, ts, design = make_binary_population(rng, 11, d=3)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
        assert pws.rho.shape == (11, 2, 1, 1)
        assert pws.mode == "population"
        assert pws.stacked().shape == (11, 1, 2)
        assert not pws.rho.flags.writeable

    def test_matches_direct_formula(self, rng):
        pop, ts, design = make_binary_population(rng, 9)
        spec = build_template("angrist", {}, pop, ts, design)
        gram = population_gram(spec, pop, ts, design)
        pws = potential_weights(spec, pop, ts, gram)
        Ginv = np.linalg.inv(gram.values)
        for i in range(pop.n):
            for j, w in enumerate((0.0, 1.0)):
                z = np.concatenate([[w, 1.0], pop.covariates[i]])
                expected = spec.contrast @ Ginv @ z
                assert pws.rho[i, j, :, 0] == pytest.approx(expected, abs=1e-12)


class TestEstimatorWeights:
    def test_population_mode_rejected(self, rng):
        pop, ts, design = make_binary_population(rng, 6)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
        with pytest.raises(ValueError, match="estimated"):
            estimator_weights(pws)

    def test_picks_observed_arm(self, rng):
        pop, ts, design = make_binary_population(rng, 12)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, sample_gram(spec, pop, ts))
        realized = estimator_weights(pws)
        for i in range(pop.n):
            assert realized[i] == pytest.approx(pws.rho[i, pop.observed_treatment[i]])

    def test_weights_sum_to_zero_with_intercept(self, rng):
        # sum_i rho_i(W_i) = Lambda G^{-1} (mean z) = Lambda e_intercept = 0
        # whenever the contrast does not load on the intercept column.
        pop, ts, design = make_binary_population(rng, 30)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, sample_gram(spec, pop, ts))
        assert abs(estimator_weights(pws).sum()) < 1e-10

    def test_point_estimate_equals_least_squares(self, rng):
        pop, ts, design = make_binary_population(rng, 40, d=3)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, sample_gram(spec, pop, ts))
        W = pop.observed_treatment.astype(float)
        X = np.column_stack([W, np.ones(pop.n), pop.covariates])
        beta = np.linalg.lstsq(X, pop.observed_outcomes[:, 0], rcond=None)[0]
        assert point_estimate(pws)[0] == pytest.approx(beta[0], abs=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(8, 60), d=st.integers(1, 4), seed=st.integers(0, 10**6))
    def test_point_estimate_is_least_squares_always(self, n, d, seed):
        rng = np.random.default_rng(seed)
        pop, ts, design = make_binary_population(rng, n, d=d)
        if len({int(w) for w in pop.observed_treatment}) < 2:
            return  # no treatment variation: regressors collinear by design
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, sample_gram(spec, pop, ts))
        X = np.column_stack(
            [pop.observed_treatment.astype(float), np.ones(n), pop.covariates]
        )
        beta, _, rank, _ = np.linalg.lstsq(X, pop.observed_outcomes[:, 0], rcond=None)
        if rank < X.shape[1]:
            return
        assert point_estimate(pws)[0] == pytest.approx(beta[0], rel=1e-8, abs=1e-8)


class TestIdentificationStrength:
    def test_sigma_is_jth_singular_value(self, rng):
        pop, ts, design = make_binary_population(rng, 14)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
        diag = identification_strength(pws)
        R = pws.stacked()
        for i in range(pop.n):
            sv = np.linalg.svd(R[i], compute_uv=False)
            assert diag.sigma[i] == pytest.approx(sv[ts.J - 1])
        assert not diag.unconstrained.any()
        assert diag.population_min == pytest.approx(diag.sigma.min())

    def _with_rho(self, pws, rho):
        return PotentialWeightSet(
            rho=rho, gram=pws.gram, mode=pws.mode, spec=pws.spec, pop=pws.pop, ts=pws.ts
        )

    def test_zero_unit_flagged_unconstrained(self, rng):
        pop, ts, design = make_binary_population(rng, 10)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
        rho = pws.rho.copy()
        rho[3] = 0.0
        diag = identification_strength(self._with_rho(pws, rho))
        assert diag.unconstrained[3]
        assert diag.sigma[3] == 0.0
        assert not diag.weakly_identified[3]
        assert diag.population_min > 0.0

    def test_tiny_unit_flagged_weak(self, rng):
        pop, ts, design = make_binary_population(rng, 10)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
        rho = pws.rho.copy()
        rho[5] *= 1e-9
        diag = identification_strength(self._with_rho(pws, rho))
        assert diag.weakly_identified[5]
        assert not diag.unconstrained[5]


class TestExport:
    def test_csv_round_trip(self, rng, tmp_path):
        pop, ts, design = make_binary_population(rng, 7)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, population_gram(spec, pop, ts, design))
        path = tmp_path / "weights.csv"
        export_weights_csv(pws, str(path))
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == pop.n * ts.num_values * pws.k * ts.T
        for row in rows:
            i = int(row["unit"])
            j = 0 if row["treatment_value"] in ("0", "0.0") else 1
            r, t = int(row["contrast_row"]), int(row["period"])
            assert float(row["rho"]) == pws.rho[i, j, r, t]
