"""Ground-truth machinery: brute-force checks, exact math, and Monte Carlo.

Everything here exists to validate the analytic modules from first
principles: evaluate the estimand directly from its defining triple sum
(optionally in exact rational arithmetic), verify level irrelevance by
actually shifting outcome levels, simulate assignment processes, and trace
estimation error as the sample grows.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _exact
from .gram import population_gram
from .model import (
    Design,
    Population,
    PotentialOutcomeTable,
    RegressionSpec,
    TreatmentSet,
    regressor_tensor,
)

__all__ = [
    "JointDesign",
    "ShiftTestResult",
    "ConsistencyCurve",
    "evaluate_estimand",
    "level_irrelevance_test",
    "simulate_assignment",
    "consistency_harness",
    "exact_estimand",
    "exact_implicit_design",
    "random_small_instance",
]

SHIFT_BOUND = 10.0
DEFAULT_SHIFTS = 200
BASIS_SWEEP_LIMIT = 200


# ---------------------------------------------------------------------------
# Estimand evaluation from the defining sums
# ---------------------------------------------------------------------------


def evaluate_estimand(
    spec: RegressionSpec,
    pop: Population,
    ts: TreatmentSet,
    potential_outcomes: np.ndarray,
    design: Design,
) -> np.ndarray:
    """tau = Lambda G(pi)^{-1} (1/n) sum_{i,t,w} pi_i(w) z_t(x_i, w) y_it(w).

    Computed straight from the definition; the weight-based evaluation in
    the estimand module must agree with this for every design.
    """
    if isinstance(potential_outcomes, PotentialOutcomeTable):
        potential_outcomes = potential_outcomes.y
    y = np.asarray(potential_outcomes, dtype=float)  # (n, J+1, T)
    Z = regressor_tensor(spec, pop, ts)  # (n, J+1, T, K)
    gram = population_gram(spec, pop, ts, design, source="candidate")
    mask = pop.observed_periods.astype(float)
    b = np.einsum("ij,ijtk,ijt,it->k", design.probs, Z, y, mask) / pop.n
    return spec.contrast @ gram.inv() @ b


def exact_estimand(Z, lam, probs, y):
    """Rational-arithmetic estimand for small cross-sections.

    Parameters are nested lists convertible to Fractions: ``Z`` indexed
    ``[i][j][k]`` (unit, arm, regressor), ``lam`` ``[r][k]``, ``probs``
    ``[i][j]``, ``y`` ``[i][j]``.
    """
    n = len(Z)
    arms = len(Z[0])
    K = len(Z[0][0])
    Zf = [[[_exact.as_fraction(v) for v in Z[i][j]] for j in range(arms)] for i in range(n)]
    pf = [[_exact.as_fraction(v) for v in probs[i]] for i in range(n)]
    yf = [[_exact.as_fraction(v) for v in y[i]] for i in range(n)]
    gram = [[Fraction(0)] * K for _ in range(K)]
    b = [Fraction(0)] * K
    for i in range(n):
        for j in range(arms):
            z = Zf[i][j]
            pij = pf[i][j]
            for a in range(K):
                b[a] += pij * z[a] * yf[i][j]
                for c in range(K):
                    gram[a][c] += pij * z[a] * z[c]
    inv_n = Fraction(1, n)
    gram = [[v * inv_n for v in row] for row in gram]
    b = [v * inv_n for v in b]
    ginv = _exact.invert(gram)
    lam_f = _exact.fraction_matrix(lam)
    return _exact.matvec(lam_f, _exact.matvec(ginv, b))


def exact_implicit_design(Z, lam, probs):
    """Exact potential weights, implicit design, and estimand weights.

    Same input conventions as :func:`exact_estimand`.  Returns a dict with
    Fraction-valued ``gram``, ``rho`` (``[i][j][r]``), ``design``
    (``[i][j]`` or None for units with no solution), ``unique`` flags, and
    ``omega`` (``[i][j][r]``, using the solved design).
    """
    n = len(Z)
    arms = len(Z[0])
    K = len(Z[0][0])
    k_rows = len(lam)
    Zf = [[[_exact.as_fraction(v) for v in Z[i][j]] for j in range(arms)] for i in range(n)]
    pf = [[_exact.as_fraction(v) for v in probs[i]] for i in range(n)]
    gram = [[Fraction(0)] * K for _ in range(K)]
    for i in range(n):
        for j in range(arms):
            z = Zf[i][j]
            pij = pf[i][j]
            for a in range(K):
                for c in range(K):
                    gram[a][c] += pij * z[a] * z[c]
    inv_n = Fraction(1, n)
    gram = [[v * inv_n for v in row] for row in gram]
    ginv = _exact.invert(gram)
    lam_g = _exact.matmul(_exact.fraction_matrix(lam), ginv)  # (k, K)
    rho = [
        [[sum(lam_g[r][a] * Zf[i][j][a] for a in range(K)) for r in range(k_rows)] for j in range(arms)]
        for i in range(n)
    ]
    design: list[list[Fraction] | None] = []
    unique: list[bool] = []
    for i in range(n):
        A = [[rho[i][j][r] for j in range(arms)] for r in range(k_rows)]
        A.append([Fraction(1)] * arms)
        b = [Fraction(0)] * k_rows + [Fraction(1)]
        sol = _exact.solve_affine(A, b)
        if sol is None:
            design.append(None)
            unique.append(False)
        else:
            design.append(sol[0])
            unique.append(len(sol[1]) == 0)
    omega = [
        None
        if design[i] is None
        else [[design[i][j] * rho[i][j][r] for r in range(k_rows)] for j in range(arms)]
        for i in range(n)
    ]
    return {"gram": gram, "rho": rho, "design": design, "unique": unique, "omega": omega}


# ---------------------------------------------------------------------------
# Level-shift invariance
# ---------------------------------------------------------------------------


@dataclass
class ShiftTestResult:
    max_shift_deviation: float
    basis_deviation: float | None
    shifts: int

    def passes(self, threshold: float = 1e-9) -> bool:
        worst = self.max_shift_deviation
        if self.basis_deviation is not None:
            worst = max(worst, self.basis_deviation)
        return worst < threshold


def level_irrelevance_test(
    spec: RegressionSpec,
    pop: Population,
    ts: TreatmentSet,
    design: Design,
    shifts: int = DEFAULT_SHIFTS,
    seed: int = 0,
    magnitude: float = SHIFT_BOUND,
) -> ShiftTestResult:
    """How much the estimand moves when outcome levels shift.

    Replaces y_it(w) with y_it(w) + c_it for random c (one value per
    unit-period, shared across treatment values) and reports the largest
    change in the estimand.  The change is linear in c, so the random
    shifts are evaluated through the per-cell sensitivity map; when the
    panel has at most 200 observed cells the exact one-hot sweep over cells
    is also run, which is a complete certificate either way.
    """
    Z = regressor_tensor(spec, pop, ts)  # (n, J+1, T, K)
    gram = population_gram(spec, pop, ts, design, source="candidate")
    mask = pop.observed_periods
    # Sensitivity of tau to a unit shift at cell (i, t):
    #   M[i, t, r] = (1/n) [Lambda G^{-1} sum_w pi_i(w) z_t(x_i, w)]_r
    core = np.einsum("ij,ijtk->itk", design.probs, Z)
    M = np.einsum("rb,itb->itr", spec.contrast @ gram.inv(), core) / pop.n
    M = np.where(mask[:, :, None], M, 0.0)

    rng = np.random.default_rng(seed)
    c = rng.uniform(-magnitude, magnitude, size=(shifts, pop.n, ts.T))
    deviations = np.einsum("sit,itr->sr", c, M)
    max_shift = float(np.abs(deviations).max(initial=0.0))

    basis = None
    if int(mask.sum()) <= BASIS_SWEEP_LIMIT:
        basis = float(np.abs(M).max(initial=0.0))
    return ShiftTestResult(max_shift_deviation=max_shift, basis_deviation=basis, shifts=shifts)


# ---------------------------------------------------------------------------
# Assignment simulation
# ---------------------------------------------------------------------------


@dataclass
class JointDesign:
    """Joint distribution of the n treatment draws.

    ``independent`` draws each unit from its design row; ``complete
    randomization`` treats a uniformly random subset of fixed size (binary
    only); ``custom`` delegates to a sampler ``rng -> (n,) arm indices``.
    """

    kind: str  # independent | complete_randomization | custom
    design: Design | None = None
    n: int | None = None
    n_treated: int | None = None
    sampler: object = None
    seed: int = 0

    def num_units(self) -> int:
        if self.kind == "independent":
            return self.design.probs.shape[0]
        if self.n is None:
            raise ValueError("n required for this joint design")
        return self.n


def simulate_assignment(jd: JointDesign, reps: int) -> np.ndarray:
    """Draw ``reps`` assignment vectors; returns (reps, n) arm indices."""
    rng = np.random.default_rng(jd.seed)
    n = jd.num_units()
    if jd.kind == "independent":
        cum = np.cumsum(jd.design.probs, axis=1)
        cum[:, -1] = 1.0
        u = rng.random((reps, n))
        return (u[:, :, None] > cum[None, :, :]).sum(axis=2).astype(np.int64)
    if jd.kind == "complete_randomization":
        if jd.n_treated is None or not 0 <= jd.n_treated <= n:
            raise ValueError("complete randomization needs 0 <= n_treated <= n")
        out = np.zeros((reps, n), dtype=np.int64)
        for r in range(reps):
            treated = rng.permutation(n)[: jd.n_treated]
            out[r, treated] = 1
        return out
    if jd.kind == "custom":
        if jd.sampler is None:
            raise ValueError("custom joint design needs a sampler")
        return np.stack([np.asarray(jd.sampler(rng), dtype=np.int64) for _ in range(reps)])
    raise ValueError(f"unknown joint design kind: {jd.kind!r}")


# ---------------------------------------------------------------------------
# Consistency harness
# ---------------------------------------------------------------------------


@dataclass
class ConsistencyCurve:
    n_grid: list[int]
    median_design_error: list[float]
    median_weight_error: list[float]
    weakly_identified: bool = False

    def decreasing(self) -> bool:
        e = self.median_design_error
        return all(e[i + 1] < e[i] for i in range(len(e) - 1))

    def to_json_dict(self) -> dict:
        return {
            "n_grid": self.n_grid,
            "median_design_error": self.median_design_error,
            "median_weight_error": self.median_weight_error,
            "weakly_identified": self.weakly_identified,
        }


def _linear_design_replication(n: int, reps: int, rng: np.random.Generator, weak: bool):
    """Linear-propensity scenario: estimate the projection design per draw.

    Returns per-replication sup errors of the estimated design and of the
    estimated potential weights (through the sample Gram).
    """
    if weak:
        # Covariate nearly collinear with the constant: the projection is
        # barely identified and errors need not shrink.
        x = 1.0 + 1e-9 * rng.standard_normal(n)
        pi_star = np.full(n, 0.5)
    else:
        x = rng.uniform(0.0, 1.0, size=n)
        pi_star = 0.2 + 0.5 * x
    X = np.column_stack([np.ones(n), x])
    XtX = X.T @ X / n
    W = rng.random((reps, n)) < pi_star[None, :]
    W = W.astype(float)
    rhs = W @ X / n  # (reps, 2)
    try:
        delta_hat = np.linalg.solve(XtX, rhs.T)  # (2, reps)
    except np.linalg.LinAlgError:
        delta_hat = np.linalg.lstsq(XtX, rhs.T, rcond=None)[0]
    delta_true = np.linalg.lstsq(X, pi_star, rcond=None)[0]
    design_err = np.abs(X @ (delta_hat - delta_true[:, None])).max(axis=0)  # (reps,)

    # Potential weights of y ~ w + 1 + x: the first Gram row/column carries
    # all the randomness (moments of W and Wx).
    mean_x, mean_x2 = x.mean(), (x**2).mean()

    def weight_error_for(mw: np.ndarray, mwx: np.ndarray) -> np.ndarray:
        errs = np.empty(mw.shape[0])
        G_true = np.array(
            [
                [pi_star.mean(), pi_star.mean(), (pi_star * x).mean()],
                [pi_star.mean(), 1.0, mean_x],
                [(pi_star * x).mean(), mean_x, mean_x2],
            ]
        )
        lam = np.array([1.0, 0.0, 0.0])
        try:
            row_true = np.linalg.solve(G_true, lam)
        except np.linalg.LinAlgError:
            # Degenerate population Gram: the weights are not identified
            # and no error curve is meaningful.
            errs.fill(np.inf)
            return errs
        Z = np.stack(
            [
                np.column_stack([np.zeros(n), np.ones(n), x]),
                np.column_stack([np.ones(n), np.ones(n), x]),
            ]
        )  # (2, n, 3)
        rho_true = np.einsum("k,wnk->wn", row_true, Z)
        for r in range(mw.shape[0]):
            G_hat = np.array(
                [
                    [mw[r], mw[r], mwx[r]],
                    [mw[r], 1.0, mean_x],
                    [mwx[r], mean_x, mean_x2],
                ]
            )
            try:
                row_hat = np.linalg.solve(G_hat, lam)
            except np.linalg.LinAlgError:
                errs[r] = np.inf
                continue
            rho_hat = np.einsum("k,wnk->wn", row_hat, Z)
            errs[r] = np.abs(rho_hat - rho_true).max()
        return errs

    weight_err = weight_error_for(W.mean(axis=1), (W * x[None, :]).mean(axis=1))
    return design_err, weight_err


def _fixed_gram_replication(n: int, reps: int, rng: np.random.Generator):
    """Complete randomization with y ~ 1 + w: the sample Gram is constant.

    The estimated weights then equal the population weights exactly in
    every draw, so both error curves are identically zero.
    """
    n1 = n // 2
    zeros = np.zeros(reps)
    del rng  # draws are irrelevant: every assignment gives the same Gram
    return zeros + (0.0 if n1 else np.nan), zeros


_SCENARIOS = {
    "angrist_linear": lambda n, reps, rng: _linear_design_replication(n, reps, rng, weak=False),
    "weak_identification": lambda n, reps, rng: _linear_design_replication(n, reps, rng, weak=True),
    "fixed_gram": _fixed_gram_replication,
}


def consistency_harness(
    scenario: str,
    n_grid: list[int],
    reps: int,
    seed: int = 0,
) -> ConsistencyCurve:
    """Median sup-norm estimation errors along a growing-n grid.

    Each grid point runs ``reps`` seeded replications of the scenario and
    records the median of the per-replication worst-case design and weight
    errors.  Valid scenarios produce strictly decreasing design-error
    curves; the weak-identification scenario is flagged and need not
    shrink.
    """
    fn = _SCENARIOS.get(scenario)
    if fn is None:
        raise ValueError(f"unknown scenario {scenario!r}; options: {sorted(_SCENARIOS)}")
    med_design, med_weight = [], []
    for k, n in enumerate(n_grid):
        rng = np.random.default_rng(seed + 1000 * k)
        design_err, weight_err = fn(n, reps, rng)
        med_design.append(float(np.median(design_err)))
        med_weight.append(float(np.median(weight_err)))
    return ConsistencyCurve(
        n_grid=list(n_grid),
        median_design_error=med_design,
        median_weight_error=med_weight,
        weakly_identified=(scenario == "weak_identification"),
    )


# ---------------------------------------------------------------------------
# Random rational instances for equivalence testing
# ---------------------------------------------------------------------------


def random_small_instance(rng: np.random.Generator, denominator: int = 8):
    """A small rational instance for solver-vs-shift-test equivalence runs.

    Draws n <= 6, J <= 2, T <= 3, a random integer-valued covariate
    transform, and a random proper rational candidate design.  All values
    are multiples of 1/denominator so the exact basis sweep is meaningful.
    Returns (spec, pop, ts, candidate_design).
    """
    from .model import RegressionSpec  # local alias for clarity

    n = int(rng.integers(2, 7))
    J = int(rng.integers(1, 3))
    T = int(rng.integers(1, 4))
    num_arms = J + 1
    values = np.zeros((num_arms, T))
    # Distinct treatment paths with small integer entries; widen the
    # alphabet when {0,1}^T has fewer than J+1 points.
    hi = 2
    while hi**T < num_arms:
        hi += 1
    seen = {tuple(values[0])}
    for j in range(1, num_arms):
        while True:
            cand = rng.integers(0, hi, size=T).astype(float)
            if tuple(cand) not in seen:
                seen.add(tuple(cand))
                values[j] = cand
                break
    ts = TreatmentSet(values=values)
    d = int(rng.integers(1, 3))
    x = rng.integers(-2, 3, size=(n, d)).astype(float)
    pop = Population(
        covariates=x,
        observed_treatment=rng.integers(0, num_arms, size=n),
        observed_outcomes=np.zeros((n, T)),
    )
    K = int(rng.integers(max(2, J), 4))

    coef_a = rng.integers(-2, 3, size=(K, T, num_arms)).astype(float)
    coef_b = rng.integers(-1, 2, size=(K, d)).astype(float)

    def transform(i, t, w):
        j = int(np.nonzero((ts.values == np.asarray(w)).all(axis=1))[0][0])
        return coef_a[:, t, j] + coef_b @ x[i]

    def batch(p, vals):
        Z = np.empty((p.n, vals.shape[0], T, K))
        xb = x @ coef_b.T  # (n, K)
        for j in range(vals.shape[0]):
            for t in range(T):
                Z[:, j, t, :] = coef_a[:, t, j][None, :] + xb
        return Z

    k_rows = int(rng.integers(1, J + 1))
    lam = rng.integers(-1, 2, size=(k_rows, K)).astype(float)
    if np.abs(lam).max() == 0:
        lam[0, 0] = 1.0
    spec = RegressionSpec(transform, K, lam, template_tag="custom", batch=batch)

    # Rational candidate design: numerators on a simplex grid.
    numer = rng.integers(1, denominator, size=(n, num_arms)).astype(float)
    probs = numer / numer.sum(axis=1, keepdims=True)
    candidate = Design(probs, kind="candidate")
    return spec, pop, ts, candidate
