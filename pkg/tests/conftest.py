"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from idweights import (
    Design,
    Population,
    TreatmentSet,
    build_template,
    population_gram,
    potential_weights,
    solve_implicit_design,
)

BINARY_TS = TreatmentSet(values=np.array([[0.0], [1.0]]))


def make_binary_population(rng: np.random.Generator, n: int, d: int = 2):
    """Cross-section with a logistic target design; returns (pop, ts, design)."""
    x = rng.uniform(-1.0, 1.0, (n, d))
    coef = rng.uniform(-1.0, 1.0, d)
    pi = 1.0 / (1.0 + np.exp(-(0.2 + x @ coef)))
    pop = Population(
        covariates=x,
        observed_treatment=(rng.random(n) < pi).astype(int),
        observed_outcomes=rng.standard_normal((n, 1)),
    )
    design = Design(np.column_stack([1.0 - pi, pi]), kind="true")
    return pop, BINARY_TS, design


def solve_template(template: str, options: dict, pop, ts, design):
    """Generic pipeline: template -> population Gram -> weights -> solver."""
    spec = build_template(template, options, pop, ts, design)
    gram = population_gram(spec, pop, ts, design)
    pws = potential_weights(spec, pop, ts, gram)
    return solve_implicit_design(pws)


@pytest.fixture
def rng():
    return np.random.default_rng(20240814)


# The exact three-arm, two-group program-participation population: half the
# units at x=0 with assignment probabilities (1/2, 1/20, 9/20), half at x=1
# with (1/10, 9/20, 9/20).
THREE_ARM_PROBS = np.array([[0.5, 0.05, 0.45], [0.1, 0.45, 0.45]])
THREE_ARM_TS = TreatmentSet(values=np.array([[0.0], [1.0], [2.0]]))


def three_arm_population(copies: int = 1):
    x = np.tile(np.array([[0.0], [1.0]]), (copies, 1))
    probs = np.tile(THREE_ARM_PROBS, (copies, 1))
    pop = Population(
        covariates=x,
        observed_treatment=np.zeros(2 * copies, dtype=int),
        observed_outcomes=np.zeros((2 * copies, 1)),
    )
    return pop, THREE_ARM_TS, Design(probs, kind="true")
