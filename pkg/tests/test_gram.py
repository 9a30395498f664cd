"""Gram matrix construction, inversion guards, FWL, and reparametrization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idweights import (
    Design,
    Population,
    SingularGramError,
    TreatmentSet,
    build_template,
    fwl_residualize,
    population_gram,
    potential_weights,
    reparametrize,
    sample_gram,
)

from conftest import make_binary_population


def test_sample_gram_is_point_mass_population_gram(rng):
    pop, ts, design = make_binary_population(rng, 15)
    spec = build_template("angrist", {}, pop, ts, design)
    g_sample = sample_gram(spec, pop, ts)
    point = Design.point_mass(pop.observed_treatment, ts.num_values)
    g_point = population_gram(spec, pop, ts, point, source="candidate")
    assert np.allclose(g_sample.values, g_point.values, atol=1e-14)
    assert g_sample.mode == "estimated"
    assert g_point.mode == "population"


def test_population_gram_symmetric_psd(rng):
    pop, ts, design = make_binary_population(rng, 25)
    spec = build_template("kline", {}, pop, ts, design)
    g = population_gram(spec, pop, ts, design)
    assert np.allclose(g.values, g.values.T)
    assert np.linalg.eigvalsh(g.values).min() > -1e-10


@settings(max_examples=20, deadline=None)
@given(alpha=st.floats(min_value=0.0, max_value=1.0), seed=st.integers(0, 9999))
def test_gram_linear_in_design(alpha, seed):
    rng = np.random.default_rng(seed)
    pop, ts, d1 = make_binary_population(rng, 10)
    _, _, d2 = make_binary_population(rng, 10)
    d2 = Design(np.column_stack([d2.probs[:10, 0], d2.probs[:10, 1]]), kind="true")
    spec = build_template("angrist", {}, pop, ts, d1)
    mix = Design(alpha * d1.probs + (1 - alpha) * d2.probs, kind="candidate")
    g_mix = population_gram(spec, pop, ts, mix, source="candidate").values
    g1 = population_gram(spec, pop, ts, d1, source="candidate").values
    g2 = population_gram(spec, pop, ts, d2, source="candidate").values
    assert np.allclose(g_mix, alpha * g1 + (1 - alpha) * g2, atol=1e-12)


def test_singular_gram_raises(rng):
    # Duplicated covariate column makes the regressors collinear.
    x = rng.uniform(-1, 1, (10, 1))
    pop = Population(
        covariates=np.column_stack([x, x]),
        observed_treatment=rng.integers(0, 2, 10),
        observed_outcomes=np.zeros((10, 1)),
    )
    ts = TreatmentSet.binary()
    pi = np.full(10, 0.5)
    design = Design(np.column_stack([1 - pi, pi]), kind="true")
    with pytest.warns(UserWarning):
        spec = build_template("angrist", {}, pop, ts, design)
    g = population_gram(spec, pop, ts, design)
    with pytest.raises(SingularGramError):
        g.inv()


def test_imbalanced_panel_sums_only_observed_cells():
    ts = TreatmentSet(values=np.array([[0.0, 0.0], [0.0, 1.0]]))
    mask = np.array([[True, True], [True, False]])
    pop = Population(
        covariates=np.zeros((2, 1)),
        observed_treatment=np.array([0, 1]),
        observed_outcomes=np.zeros((2, 2)),
        observed_periods=mask,
    )
    spec = build_template("owfe", {}, pop, ts, None)
    g_full = sample_gram(spec, pop, ts).values

    # Recompute by hand over observed cells only.
    from idweights import regressor_tensor

    Z = regressor_tensor(spec, pop, ts)
    acc = np.zeros((spec.K, spec.K))
    for i in range(2):
        j = pop.observed_treatment[i]
        for t in range(2):
            if mask[i, t]:
                acc += np.outer(Z[i, j, t], Z[i, j, t])
    assert np.allclose(g_full, acc / 2)


class TestFwl:
    def test_weights_invariant(self, rng):
        pop, ts, design = make_binary_population(rng, 20)
        spec = build_template("angrist", {}, pop, ts, design)
        gram = sample_gram(spec, pop, ts)
        pws = potential_weights(spec, pop, ts, gram)
        spec_f = fwl_residualize(spec, gram, keep=[0])
        pws_f = potential_weights(spec_f, pop, ts, sample_gram(spec_f, pop, ts))
        scale = np.abs(pws.rho).max()
        assert np.abs(pws.rho - pws_f.rho).max() / scale < 1e-9

    def test_contrast_on_partialled_regressor_rejected(self, rng):
        pop, ts, design = make_binary_population(rng, 10)
        spec = build_template("angrist", {}, pop, ts, design)
        gram = sample_gram(spec, pop, ts)
        with pytest.raises(ValueError, match="loads on"):
            fwl_residualize(spec, gram, keep=[1])


class TestReparametrize:
    def test_weights_invariant(self, rng):
        pop, ts, design = make_binary_population(rng, 20)
        spec = build_template("angrist", {}, pop, ts, design)
        pws = potential_weights(spec, pop, ts, sample_gram(spec, pop, ts))
        M = rng.standard_normal((spec.K, spec.K)) + 3.0 * np.eye(spec.K)
        spec_r = reparametrize(spec, M)
        pws_r = potential_weights(spec_r, pop, ts, sample_gram(spec_r, pop, ts))
        scale = np.abs(pws.rho).max()
        assert np.abs(pws.rho - pws_r.rho).max() / scale < 1e-9

    def test_ill_conditioned_rejected(self, rng):
        pop, ts, design = make_binary_population(rng, 10)
        spec = build_template("angrist", {}, pop, ts, design)
        M = np.eye(spec.K)
        M[0, 0] = 1e-15
        with pytest.raises(np.linalg.LinAlgError):
            reparametrize(spec, M)
