"""Closed-form implicit designs and existence conditions for standard templates.

Each operation returns a :class:`CatalogResult` holding the closed-form
design (when one exists), the coefficient vectors behind it, and numeric
slack for any necessary conditions.  Every design produced here is
cross-validated against the generic solver in the test suite.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .gram import population_gram
from .model import Design, Population, RegressionSpec, TreatmentSet, build_template
from .weights import potential_weights

__all__ = [
    "CatalogResult",
    "ConditionCheck",
    "FixedPointError",
    "angrist_design",
    "multivalued_design",
    "saturated_interacted_design",
    "kline_design",
    "interacted_t_design",
    "fractional_linear_design",
    "transplanted_ate_residual",
    "forbidden_interaction_check",
    "twfe_design",
    "twfe_covariate_condition",
    "unbalanced_twfe_condition",
    "owfe_check",
    "event_study_design",
]

SPAN_RTOL = 1e-8


class FixedPointError(RuntimeError):
    """Self-consistency iteration failed to converge."""


@dataclass
class ConditionCheck:
    name: str
    slack: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.slack <= self.tolerance

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "slack": self.slack,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


@dataclass
class CatalogResult:
    """Closed-form design, its coefficients, and condition slacks."""

    template: str
    design: Design | None
    exists: bool
    estimand_form: str  # WATE_variance | contaminated | ATE | ATT | TWFE_random | none
    parameters: dict = field(default_factory=dict)
    conditions: list[ConditionCheck] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    estimand_weights: np.ndarray | None = None

    @property
    def proper(self) -> bool | None:
        if self.design is None:
            return None
        return self.design.is_proper()

    def condition(self, name: str) -> ConditionCheck:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json_dict(self) -> dict:
        params = {}
        for key, value in self.parameters.items():
            if isinstance(value, np.ndarray):
                params[key] = value.tolist()
            elif isinstance(value, (np.floating, np.integer)):
                params[key] = value.item()
            else:
                params[key] = value
        return {
            "template": self.template,
            "exists": self.exists,
            "proper": self.proper,
            "estimand_form": self.estimand_form,
            "parameters": params,
            "conditions": [c.to_json_dict() for c in self.conditions],
            "notes": self.notes,
        }


def _with_constant(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 1 and x.size > 1:
        x = x.T
    return np.column_stack([np.ones(x.shape[0]), x])


def _projection(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of y on X; errors on rank deficiency."""
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise np.linalg.LinAlgError("collinear regressors in projection")
    return coef


def _target_probs(pop: Population, ts: TreatmentSet, mode: str, design: Design | None) -> np.ndarray:
    """Per-unit arm probabilities used as the projection target.

    Population mode projects the supplied true design; estimated mode
    projects the observed point masses.
    """
    if mode == "population":
        if design is None:
            raise ValueError("population mode requires the true design")
        return design.probs
    if mode == "estimated":
        return Design.point_mass(pop.observed_treatment, ts.num_values).probs
    raise ValueError(f"unknown mode: {mode!r}")


def _binary_design(pi: np.ndarray) -> Design:
    return Design(np.column_stack([1.0 - pi, pi]), kind="implicit")


def _span_basis(columns: np.ndarray, rtol: float = SPAN_RTOL) -> np.ndarray:
    """Orthonormal basis of the column span via pivoted QR."""
    A = np.atleast_2d(np.asarray(columns, dtype=float))
    if A.size == 0 or A.shape[1] == 0:
        return np.zeros((A.shape[0], 0))
    Q, R, _ = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    cutoff = rtol * (diag.max(initial=0.0) or 1.0)
    rank = int((diag > cutoff).sum())
    return Q[:, :rank]


def _distance_to_span(v: np.ndarray, basis: np.ndarray) -> float:
    resid = v - basis @ (basis.T @ v)
    return float(np.linalg.norm(resid))


def _in_span(v: np.ndarray, columns: np.ndarray, rtol: float = SPAN_RTOL) -> tuple[bool, float]:
    basis = _span_basis(columns, rtol)
    dist = _distance_to_span(v, basis)
    scale = float(np.linalg.norm(v))
    return dist <= rtol * max(scale, 1.0), dist


def _gram_consistency_check(
    spec: RegressionSpec,
    pop: Population,
    ts: TreatmentSet,
    implied: Design,
    reference: Design,
    tol: float = 1e-8,
) -> ConditionCheck:
    g_imp = population_gram(spec, pop, ts, implied).values
    g_ref = population_gram(spec, pop, ts, reference).values
    gap = float(np.abs(g_imp - g_ref).max())
    scale = float(np.abs(g_ref).max()) or 1.0
    return ConditionCheck("gram_consistency", gap / scale, tol)


# ---------------------------------------------------------------------------
# Cross-sectional catalog
# ---------------------------------------------------------------------------


def angrist_design(
    pop: Population, mode: str = "population", design: Design | None = None
) -> CatalogResult:
    """Linear-in-covariates regression of y on (w, 1, x).

    The implicit design is the linear projection ``pi_i = x_i'delta`` of the
    assignment probabilities (observed treatments, in estimated mode) on the
    covariates with a constant.  The estimand is a variance-weighted average
    effect with weights proportional to ``pi_i (1 - pi_i)``.
    """
    ts = TreatmentSet.binary()
    target = _target_probs(pop, ts, mode, design)[:, 1]
    X = _with_constant(pop.covariates)
    delta = _projection(X, target)
    pi = X @ delta
    dsg = _binary_design(pi)
    variance_weights = pi * (1.0 - pi)
    total = variance_weights.mean()
    omega = variance_weights / total if abs(total) > 1e-300 else np.zeros_like(pi)
    conditions = [
        ConditionCheck("proper", max(0.0, float(np.max(np.abs(pi - 0.5)) - 0.5)), 1e-10),
    ]
    notes = []
    if not dsg.is_proper():
        notes.append("fitted probabilities leave [0, 1]: design is improper")
    ref = design if mode == "population" else Design.point_mass(pop.observed_treatment, 2)
    spec = build_template("angrist", {}, pop, ts, None)
    conditions.append(_gram_consistency_check(spec, pop, ts, dsg, ref))
    return CatalogResult(
        template="angrist",
        design=dsg,
        exists=True,
        estimand_form="WATE_variance",
        parameters={"delta": delta},
        conditions=conditions,
        notes=notes,
        estimand_weights=omega,
    )


def multivalued_design(
    pop: Population,
    ts: TreatmentSet,
    mode: str = "population",
    design: Design | None = None,
) -> CatalogResult:
    """Arm-indicator regression with linearly controlled covariates.

    Each arm probability is projected on the covariates separately:
    ``pi_i(j) = x_i'delta_j``.  The estimand for each contrast is generally
    contaminated by effects of the other arms.
    """
    if ts.T != 1:
        raise ValueError("multivalued catalog form is cross-sectional")
    target = _target_probs(pop, ts, mode, design)
    X = _with_constant(pop.covariates)
    deltas = np.column_stack([_projection(X, target[:, j]) for j in range(1, ts.num_values)])
    arm_probs = X @ deltas  # (n, J)
    probs = np.column_stack([1.0 - arm_probs.sum(axis=1), arm_probs])
    dsg = Design(probs, kind="implicit")
    ref = design if mode == "population" else Design.point_mass(pop.observed_treatment, ts.num_values)
    spec = build_template("multivalued", {}, pop, ts, None)
    conditions = [_gram_consistency_check(spec, pop, ts, dsg, ref)]
    return CatalogResult(
        template="multivalued",
        design=dsg,
        exists=True,
        estimand_form="contaminated",
        parameters={"delta": deltas.T},
        conditions=conditions,
    )


def saturated_interacted_design(
    pop: Population,
    mode: str = "population",
    design: Design | None = None,
    cells: np.ndarray | None = None,
) -> CatalogResult:
    """Fully saturated-in-cells regression with cell-interacted treatment.

    The implicit design assigns every unit its cell's average assignment
    probability (treated share, in estimated mode), and the estimand is the
    unweighted ATE: every unit receives effect weight one.
    """
    ts = TreatmentSet.binary()
    target = _target_probs(pop, ts, mode, design)[:, 1]
    if cells is None:
        _, cells = np.unique(np.atleast_2d(pop.covariates), axis=0, return_inverse=True)
    cells = np.asarray(cells)
    labels = np.unique(cells)
    pi = np.empty(pop.n)
    shares = {}
    for lbl in labels:
        members = cells == lbl
        pi[members] = target[members].mean()
        shares[int(lbl)] = float(target[members].mean())
    dsg = _binary_design(pi)
    ref = design if mode == "population" else Design.point_mass(pop.observed_treatment, 2)
    spec = build_template("saturated_interacted", {}, pop, ts, None)
    conditions = [_gram_consistency_check(spec, pop, ts, dsg, ref)]
    return CatalogResult(
        template="saturated_interacted",
        design=dsg,
        exists=True,
        estimand_form="ATE",
        parameters={"cell_shares": np.array([shares[int(k)] for k in labels])},
        conditions=conditions,
        estimand_weights=np.ones(pop.n),
    )


def kline_design(
    pop: Population, mode: str = "population", design: Design | None = None
) -> CatalogResult:
    """Interacted regression centered at the treated covariate mean.

    The implicit design has linear propensity odds:

        pi_i / (1 - pi_i) = delta_0 + delta_1'(x_i - xbar_0),

    with ``delta_0, delta_1`` the (1 - pi*)-weighted projection of the odds
    on the centered covariates.  In estimated mode the coefficients have a
    direct sample form that never touches the unobservable odds.  The
    estimand is the ATT with weights ``pi_i / mean(pi)``.  Unlike the other
    cross-sectional forms, Gram-consistency is not automatic here and the
    reported check carries information.
    """
    ts = TreatmentSet.binary()
    x = np.atleast_2d(np.asarray(pop.covariates, dtype=float))
    if x.shape[0] == 1 and x.size > 1:
        x = x.T
    n = pop.n
    if mode == "population":
        if design is None:
            raise ValueError("population mode requires the true design")
        p = design.probs[:, 1]
        w0 = 1.0 - p
        if w0.sum() <= 0 or p.sum() <= 0:
            raise ValueError("degenerate assignment: one arm has zero mass")
        alpha0 = float(p.mean())
        xbar0 = (w0 @ x) / w0.sum()
        xc = x - xbar0
        U0 = (w0[:, None] * xc).T @ xc / n
        rhs = (p @ xc) / n
        delta0 = alpha0 / (1.0 - alpha0)
    else:
        w_obs = (pop.observed_treatment == 1).astype(float)
        n1 = w_obs.sum()
        n0 = n - n1
        if n1 == 0 or n0 == 0:
            raise ValueError("both treatment arms must be observed")
        xbar0 = ((1.0 - w_obs) @ x) / n0
        xc = x - xbar0
        U0 = ((1.0 - w_obs)[:, None] * xc).T @ xc / n
        rhs = (w_obs @ xc) / n
        delta0 = n1 / n0
    try:
        delta1 = np.linalg.solve(U0, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "singular untreated covariate second moment"
        ) from exc
    odds = delta0 + xc @ delta1
    pi = odds / (1.0 + odds)
    dsg = _binary_design(pi)
    mean_pi = pi.mean()
    att_weights = pi / mean_pi if abs(mean_pi) > 1e-300 else np.zeros_like(pi)
    ref = design if mode == "population" else Design.point_mass(pop.observed_treatment, 2)
    spec = build_template("kline", {}, pop, ts, design if mode == "population" else None)
    result = CatalogResult(
        template="kline",
        design=dsg,
        exists=True,
        estimand_form="ATT",
        parameters={"delta0": float(delta0), "delta1": delta1, "xbar0": xbar0},
        conditions=[_gram_consistency_check(spec, pop, ts, dsg, ref)],
        notes=["gram consistency is not automatic for this form; check the reported slack"],
        estimand_weights=att_weights,
    )
    return result


# ---------------------------------------------------------------------------
# Interacted regression centered at a point between the arm means
# ---------------------------------------------------------------------------


def _interact_coefficients(x: np.ndarray, p: np.ndarray, t: float | None) -> dict:
    """Coefficient system of the interacted regression at centering index t.

    ``t = 1`` centers the interaction at the treated mean, ``t = 0`` at the
    untreated mean, and ``t = mean(p)`` at the overall mean (the
    unconditional-average contrast).  ``t=None`` means the latter.
    """
    n, d = x.shape
    alpha0 = float(p.mean())
    if p.sum() <= 0 or (1.0 - p).sum() <= 0:
        raise ValueError("degenerate assignment: one arm has zero mass")
    xbar = x.mean(axis=0)
    xbar1 = (p @ x) / p.sum()
    xbar0 = ((1.0 - p) @ x) / (1.0 - p).sum()
    t_eff = alpha0 if t is None else float(t)
    xbar_t = t_eff * xbar1 + (1.0 - t_eff) * xbar0
    xc = x - xbar
    xt = x - xbar_t
    A = xc.T @ xc / n
    V_t = (p[:, None] * xt).T @ xt / n
    U_t = ((1.0 - p)[:, None] * xt).T @ xt / n
    gamma0 = (p @ xt) / n
    alpha1 = np.linalg.solve(A, gamma0 + alpha0 * (xbar_t - xbar))
    gamma1 = np.linalg.solve(A.T, (V_t + np.outer(gamma0, xbar_t - xbar)).T).T
    lhs = V_t - np.outer(gamma0, gamma0) - V_t @ gamma1.T - np.outer(gamma0, (xbar_t - xbar) @ gamma1.T)
    rhs = gamma0 - alpha0 * gamma0 - V_t @ alpha1 - gamma0 * float((xbar_t - xbar) @ alpha1)
    gamma2 = np.linalg.solve(lhs, rhs)
    theta0 = alpha0 - float(gamma2 @ gamma0)
    theta1 = alpha1 - gamma1.T @ gamma2
    # Fixed-center second moments entering the self-consistency condition.
    V_1 = (p[:, None] * (x - xbar1)).T @ (x - xbar1) / n
    U_0 = ((1.0 - p)[:, None] * (x - xbar0)).T @ (x - xbar0) / n
    necessary = t_eff * V_1 @ (theta1 + gamma2) - (1.0 - t_eff) * U_0 @ theta1
    return {
        "t": t_eff,
        "alpha0": alpha0,
        "alpha1": alpha1,
        "gamma0": gamma0,
        "gamma1": gamma1,
        "gamma2": gamma2,
        "theta0": theta0,
        "theta1": theta1,
        "xbar": xbar,
        "xbar0": xbar0,
        "xbar1": xbar1,
        "xbar_t": xbar_t,
        "necessary_slack": float(np.abs(necessary).max()),
    }


def _fractional_linear_probs(
    x: np.ndarray, theta0: float, theta1: np.ndarray, gamma2: np.ndarray,
    center_mean: np.ndarray, center_t: np.ndarray,
) -> np.ndarray:
    num = theta0 + (x - center_mean) @ theta1
    den = 1.0 - (x - center_t) @ gamma2
    if np.abs(den).min() < 1e-10:
        raise ZeroDivisionError("fractional-linear denominator vanishes for some unit")
    return num / den


def fractional_linear_design(
    theta0: float,
    theta1: np.ndarray,
    gamma2: np.ndarray,
    covariates: np.ndarray,
    center: np.ndarray | None = None,
) -> Design:
    """Design implied by transplanting fractional-linear coefficients.

    Both the numerator and the denominator are centered at ``center``
    (defaults to the covariate mean), which is how the coefficients are
    carried to a new covariate configuration when the original centering
    point was itself the covariate mean.
    """
    x = np.atleast_2d(np.asarray(covariates, dtype=float))
    if x.shape[0] == 1 and x.size > 1:
        x = x.T
    c = x.mean(axis=0) if center is None else np.asarray(center, dtype=float)
    pi = _fractional_linear_probs(
        x, float(theta0), np.atleast_1d(theta1), np.atleast_1d(gamma2), c, c
    )
    return Design(np.column_stack([1.0 - pi, pi]), kind="candidate")


def interacted_t_design(
    pop: Population,
    t: float | None = None,
    mode: str = "population",
    design: Design | None = None,
    seed_design: Design | None = None,
    max_iterations: int = 1000,
    tol: float = 1e-12,
) -> CatalogResult:
    """Interacted regression of y on (1, w, x, w*x) with a centered contrast.

    * With a known design, the fractional-linear implicit design and all
      coefficients are computed in one pass.
    * With ``design=None`` (population mode, unknown assignment), a plain
      fixed-point iteration searches for a self-consistent design: start at
      ``seed_design``, map the current probabilities through the implicit
      design of the regression evaluated at them, and repeat until the
      sup-norm change drops below ``tol``.  Divergence triggers damping with
      a warning.

    The reported ``self_consistency`` condition measures how far the design
    is from satisfying the requirement that it coincide with the true
    assignment process; it is hard to satisfy except at ``t = 0`` or
    ``t = 1``.
    """
    ts = TreatmentSet.binary()
    x = np.atleast_2d(np.asarray(pop.covariates, dtype=float))
    if x.shape[0] == 1 and x.size > 1:
        x = x.T
    iterations = 0
    final_step = 0.0
    notes: list[str] = []

    if design is not None:
        p = design.probs[:, 1].copy()
    else:
        if mode != "population":
            raise ValueError("estimated mode requires an observed-treatment design; pass design=")
        p = (
            seed_design.probs[:, 1].copy()
            if seed_design is not None
            else np.full(pop.n, 0.5)
        )
        # Self-consistency iteration: each step recomputes the implicit
        # design of the regression at the current probabilities.
        center = x.mean(axis=0) if t is None else None
        spec_opts: dict = {"centering": "mean"} if t is None else {"t": float(t)}
        damping = False
        prev_step = np.inf
        for iterations in range(1, max_iterations + 1):
            current = _binary_design(p)
            opts = dict(spec_opts)
            spec = build_template("interacted_t", opts, pop, ts, current)
            gram = population_gram(spec, pop, ts, current)
            pws = potential_weights(spec, pop, ts, gram)
            rho0 = pws.rho[:, 0, 0, 0]
            rho1 = pws.rho[:, 1, 0, 0]
            diff = rho1 - rho0
            if np.abs(diff).min() < 1e-300:
                raise FixedPointError("weight contrast vanishes; map undefined")
            p_new = -rho0 / diff
            step = float(np.abs(p_new - p).max())
            if not np.isfinite(step) or (step > 10.0 * prev_step and step > 1.0):
                if not damping:
                    damping = True
                    warnings.warn(
                        "self-consistency iteration diverging; damping enabled",
                        RuntimeWarning,
                        stacklevel=2,
                    )
                p = 0.5 * (p + np.nan_to_num(p_new, nan=0.5, posinf=1.0, neginf=0.0))
                prev_step = step if np.isfinite(step) else prev_step
                continue
            p = 0.5 * (p + p_new) if damping else p_new
            prev_step = step
            final_step = step
            if step < tol:
                break
        else:
            raise FixedPointError(
                f"no fixed point within {max_iterations} iterations "
                f"(last step {final_step:.3e})"
            )
        if center is not None:
            notes.append("contrast centered at the covariate mean throughout the iteration")

    coefs = _interact_coefficients(x, p, t)
    pi = _fractional_linear_probs(
        x, coefs["theta0"], coefs["theta1"], coefs["gamma2"], coefs["xbar"], coefs["xbar_t"]
    )
    dsg = _binary_design(pi)
    conditions = [
        ConditionCheck("self_consistency", coefs["necessary_slack"], 1e-8),
    ]
    if design is None:
        conditions.append(ConditionCheck("fixed_point_step", final_step, tol))
        conditions.append(
            ConditionCheck("fixed_point_gap", float(np.abs(pi - p).max()), 1e-9)
        )
    t_eff = coefs["t"]
    if t is not None and float(t) == 1.0:
        form = "ATT"
    elif t is None or abs(t_eff - coefs["alpha0"]) < 1e-12:
        form = "ATE"
    else:
        form = "none"
        notes.append("contrast centered between the arm means; no canonical tag")
    params = {k: v for k, v in coefs.items() if k != "necessary_slack"}
    params["iterations"] = iterations
    return CatalogResult(
        template="interacted_t",
        design=dsg,
        exists=True,
        estimand_form=form,
        parameters=params,
        conditions=conditions,
        notes=notes,
    )


def transplanted_ate_residual(
    theta0: float,
    theta1: np.ndarray,
    gamma2: np.ndarray,
    base_pop: Population,
    new_pop: Population,
) -> float:
    """Worst level-irrelevance residual of transplanted coefficients.

    Carries fractional-linear coefficients fitted on ``base_pop`` over to
    ``new_pop``'s covariates, forms the transplanted design, and evaluates
    the mean-centered contrast's level-irrelevance residual for it.  The
    Gram matrix is evaluated on the base population's regressors under the
    transplanted probabilities — the construction used to demonstrate that
    these coefficients are tied to the covariate configuration.
    """
    ts = TreatmentSet.binary()
    new_design = fractional_linear_design(theta0, theta1, gamma2, new_pop.covariates)
    spec_base = build_template("interacted_t", {"centering": "mean"}, base_pop, ts, None)
    spec_new = build_template("interacted_t", {"centering": "mean"}, new_pop, ts, None)
    gram = population_gram(spec_base, base_pop, ts, new_design, source="candidate")
    pws = potential_weights(spec_new, new_pop, ts, gram)
    resid = np.einsum("ij,ijkt->ikt", new_design.probs, pws.rho)
    return float(np.abs(resid).max())


# ---------------------------------------------------------------------------
# Interactions with partially controlled covariates
# ---------------------------------------------------------------------------


def forbidden_interaction_check(
    pop: Population,
    x1_cols: list[int],
    x2_cols: list[int],
    mode: str = "population",
    design: Design | None = None,
    tol: float = SPAN_RTOL,
) -> CatalogResult:
    """Existence check for treatment interacted with a covariate subset.

    The regression controls ``x2`` linearly and interacts the treatment with
    ``x1``.  An implicit design exists if and only if the projection
    identity

        (delta_0 + delta_1'x2_i) * x1_i = Gamma_0 + Gamma_1 x2_i

    holds at every unit, where ``delta`` projects the assignment
    probabilities on (1, x2) and ``Gamma`` projects their product with x1 on
    (1, x2).  When it holds, the design is the linear projection itself.
    """
    ts = TreatmentSet.binary()
    target = _target_probs(pop, ts, mode, design)[:, 1]
    x = np.atleast_2d(pop.covariates)
    if x.shape[0] == 1 and x.size > 1:
        x = x.T
    x1 = x[:, x1_cols]
    x2 = x[:, x2_cols]
    X2 = _with_constant(x2)
    delta = _projection(X2, target)
    Gamma = _projection(X2, target[:, None] * x1)  # (1+d2, d1)
    fitted_pi = X2 @ delta
    lhs = fitted_pi[:, None] * x1
    rhs = X2 @ Gamma
    slack_per_unit = np.abs(lhs - rhs).max(axis=1)
    scale = max(float(np.abs(lhs).max(initial=0.0)), 1.0)
    slack = float(slack_per_unit.max(initial=0.0)) / scale
    exists = slack <= tol
    dsg = _binary_design(fitted_pi) if exists else None
    return CatalogResult(
        template="forbidden_interaction",
        design=dsg,
        exists=exists,
        estimand_form="none" if not exists else "contaminated",
        parameters={"delta": delta, "Gamma": Gamma},
        conditions=[ConditionCheck("projection_identity", slack, tol)],
        notes=[] if exists else ["no design satisfies level irrelevance for this interaction"],
    )


# ---------------------------------------------------------------------------
# Panel catalog
# ---------------------------------------------------------------------------


def _path_uniqueness_conditions(vectors: np.ndarray, tol: float = SPAN_RTOL) -> list[ConditionCheck]:
    """Uniqueness conditions on a multiset of per-path T-vectors.

    (a) at most one zero vector, (b) nonzero vectors linearly independent,
    (c) their span excludes the constant vector.
    """
    T = vectors.shape[1]
    norms = np.linalg.norm(vectors, axis=1)
    scale = norms.max(initial=0.0) or 1.0
    nonzero = vectors[norms > tol * scale]
    num_zero = int((norms <= tol * scale).sum())
    checks = [ConditionCheck("at_most_one_zero_path", float(max(0, num_zero - 1)), 0.0)]
    if nonzero.shape[0] == 0:
        checks.append(ConditionCheck("nonzero_paths_independent", 1.0, 0.0))
        checks.append(ConditionCheck("span_excludes_constant", 0.0, 0.0))
        return checks
    rank = np.linalg.matrix_rank(nonzero.T, tol=tol * scale)
    checks.append(
        ConditionCheck("nonzero_paths_independent", float(nonzero.shape[0] - rank), 0.0)
    )
    in_span, _ = _in_span(np.ones(T), nonzero.T, tol)
    checks.append(ConditionCheck("span_excludes_constant", 1.0 if in_span else 0.0, 0.0))
    return checks


def twfe_design(
    pop: Population,
    ts: TreatmentSet,
    mode: str = "population",
    design: Design | None = None,
) -> CatalogResult:
    """Two-way fixed-effects regression with a scalar treatment coefficient.

    The implicit design is constant across units: each path gets the average
    assignment probability (its empirical frequency, in estimated mode).
    The estimand re-weights path-by-period cells; negative weights on
    treated cells mark forbidden comparisons.
    """
    probs = _target_probs(pop, ts, mode, design)
    pibar = probs.mean(axis=0)
    dsg = Design(np.tile(pibar, (pop.n, 1)), kind="implicit")
    conditions = _path_uniqueness_conditions(ts.values)
    from .estimand import twfe_weights  # local import to avoid cycles

    try:
        table = twfe_weights(dsg, ts)
        weights = table.weights
        forbidden = table.forbidden
    except ValueError:
        weights, forbidden = None, []
    ref = design if mode == "population" else Design.point_mass(pop.observed_treatment, ts.num_values)
    spec = build_template("twfe", {}, pop, ts, None)
    conditions.append(_gram_consistency_check(spec, pop, ts, dsg, ref))
    notes = []
    if forbidden:
        notes.append(f"forbidden comparisons at (path, period): {forbidden}")
    return CatalogResult(
        template="twfe",
        design=dsg,
        exists=True,
        estimand_form="TWFE_random",
        parameters={"pibar": pibar, "cell_weights": weights},
        conditions=conditions,
        notes=notes,
    )


def _two_way_demean(arr: np.ndarray) -> np.ndarray:
    """Residual of a balanced (n, T, ...) array on unit and time means."""
    unit_mean = arr.mean(axis=1, keepdims=True)
    time_mean = arr.mean(axis=0, keepdims=True)
    grand = arr.mean(axis=(0, 1), keepdims=True)
    return arr - unit_mean - time_mean + grand


def twfe_covariate_condition(
    pop: Population,
    ts: TreatmentSet,
    covariate_paths: np.ndarray,
    mode: str = "population",
    design: Design | None = None,
    tol: float = SPAN_RTOL,
) -> CatalogResult:
    """Existence condition for two-way FE with time-varying covariates.

    Projects the (expected) treatment path on the covariate paths after
    double demeaning to get ``beta``; implicit designs can only exist when
    every unit's centered covariate path times ``beta`` lies in the span of
    the treatment paths and the constant.  ``beta = 0`` recovers the plain
    constant design.
    """
    x = np.asarray(covariate_paths, dtype=float)  # (n, T, K)
    if x.ndim == 2:
        x = x[:, :, None]
    n, T, K = x.shape
    if T != ts.T:
        raise ValueError("covariate paths and treatment paths disagree on T")
    probs = _target_probs(pop, ts, mode, design)
    expected_w = probs @ ts.values  # (n, T)
    wdd = _two_way_demean(expected_w[:, :, None])[:, :, 0]
    xdd = _two_way_demean(x)
    Xf = xdd.reshape(n * T, K)
    beta, _, rank, _ = np.linalg.lstsq(Xf, wdd.reshape(n * T), rcond=None)
    if rank < K:
        raise np.linalg.LinAlgError("collinear demeaned covariate paths")
    beta_scale = float(np.abs(beta).max(initial=0.0))
    conditions = []
    if beta_scale <= 1e-12:
        pibar = probs.mean(axis=0)
        dsg = Design(np.tile(pibar, (pop.n, 1)), kind="implicit")
        conditions.append(ConditionCheck("span_membership", 0.0, tol))
        return CatalogResult(
            template="twfe_covariates",
            design=dsg,
            exists=True,
            estimand_form="TWFE_random",
            parameters={"beta": beta, "pibar": pibar},
            conditions=conditions,
            notes=["treatment paths orthogonal to covariate paths: constant design applies"],
        )
    xbar = x.mean(axis=0)  # (T, K)
    span_cols = np.column_stack([ts.values.T, np.ones(T)])
    basis = _span_basis(span_cols, tol)
    v = (x - xbar) @ beta  # (n, T)
    dists = np.array([_distance_to_span(v[i], basis) for i in range(n)])
    scale = max(float(np.abs(v).max(initial=0.0)), 1.0)
    slack = float(dists.max(initial=0.0)) / scale
    exists = slack <= tol
    conditions.append(ConditionCheck("span_membership", slack, tol))
    return CatalogResult(
        template="twfe_covariates",
        design=None,
        exists=exists,
        estimand_form="TWFE_random" if exists else "none",
        parameters={"beta": beta, "per_unit_distance": dists},
        conditions=conditions,
        notes=[]
        if exists
        else ["centered covariate trend leaves the treatment-path span: no implicit design"],
    )


def unbalanced_twfe_condition(
    pop: Population,
    ts: TreatmentSet,
    mode: str = "population",
    design: Design | None = None,
    tol: float = 1e-8,
) -> CatalogResult:
    """Missingness-balance condition for two-way FE on an imbalanced panel.

    With per-unit observation sets, the constant design survives exactly
    when for every period the missingness-adjusted treatment deviation has
    the same total under the candidate assignment process and under the
    constant design:

        sum_{i observed at t} E_pibar[w_t - Q_i(w)]
            = sum_{i observed at t} E_pi_i*[w_t - Q_i(w)],

    where ``Q_i(w)`` averages the path over unit i's observed periods.
    Requires rich variation of the paths restricted to the common window.
    """
    probs = _target_probs(pop, ts, mode, design)
    pibar = probs.mean(axis=0)
    mask = pop.observed_periods  # (n, T)
    L = mask.sum(axis=1).astype(float)
    if np.any(L == 0):
        raise ValueError("every unit needs at least one observed period")
    W = ts.values  # (J+1, T)
    # Q[i, j] = average of path j over unit i's observed periods.
    Q = (mask.astype(float) @ W.T) / L[:, None]
    common = mask.all(axis=0)
    conditions = []
    if not common.any():
        conditions.append(ConditionCheck("common_window_nonempty", 1.0, 0.0))
    else:
        conditions.append(ConditionCheck("common_window_nonempty", 0.0, 0.0))
        restricted = W[:, common]
        conditions.extend(
            c
            for c in _path_uniqueness_conditions(restricted)
            if c.name in ("nonzero_paths_independent", "span_excludes_constant")
        )
    slack_per_t = np.zeros(ts.T)
    for t in range(ts.T):
        at_t = mask[:, t]
        if not at_t.any():
            continue
        dev_bar = (pibar @ W[:, t]) * at_t.sum() - (pibar @ Q.T)[at_t].sum()
        dev_true = (probs[at_t] @ W[:, t]).sum() - np.einsum(
            "ij,ij->", probs[at_t], Q[at_t]
        )
        slack_per_t[t] = abs(dev_bar - dev_true)
    slack = float(slack_per_t.max(initial=0.0)) / max(pop.n, 1)
    conditions.append(ConditionCheck("missingness_balance", slack, tol))
    holds = all(c.passed for c in conditions)
    dsg = Design(np.tile(pibar, (pop.n, 1)), kind="implicit") if holds else None
    return CatalogResult(
        template="unbalanced_twfe",
        design=dsg,
        exists=holds,
        estimand_form="TWFE_random" if holds else "none",
        parameters={"pibar": pibar, "per_period_slack": slack_per_t},
        conditions=conditions,
        notes=[]
        if holds
        else ["treatment paths correlate with the missingness pattern: constant design fails"],
    )


def owfe_check(ts: TreatmentSet, tol: float = SPAN_RTOL) -> CatalogResult:
    """Existence check for the unit-fixed-effects-only regression.

    The potential weights are proportional to the time-demeaned path, so a
    design can only exist when the constant vector lies in the span of the
    treatment paths.  Staggered-adoption sets without an always-treated path
    fail this and admit no implicit design at all.
    """
    W = ts.values
    ones = np.ones(ts.T)
    in_span, dist = _in_span(ones, W.T, tol)
    demeaned = W - W.mean(axis=1, keepdims=True)
    notes = (
        ["span condition is necessary only; no closed-form design is implied"]
        if in_span
        else ["constant vector outside the path span: no implicit design exists"]
    )
    return CatalogResult(
        template="owfe",
        design=None,
        exists=bool(in_span),
        estimand_form="none",
        parameters={"demeaned_paths": demeaned, "constant_span_distance": dist},
        conditions=[ConditionCheck("constant_in_path_span", dist, tol * np.sqrt(ts.T))],
        notes=notes,
    )


def event_study_design(
    pop: Population,
    ts: TreatmentSet,
    path_features: np.ndarray,
    mode: str = "population",
    design: Design | None = None,
    identity_contrast: bool = True,
) -> CatalogResult:
    """Unit- and time-fixed-effects regression on path features f_t(w).

    ``path_features`` has shape (num_paths, T, K).  The average assignment
    probability per path (empirical path frequency, in estimated mode) is
    always a proper, Gram-consistent implicit design.  With the identity
    contrast it is also the unique one whenever some feature column's path
    vectors contain at most one zero vector, are linearly independent, and
    span no constant vector.
    """
    F = np.asarray(path_features, dtype=float)
    if F.ndim == 2:
        F = F[:, :, None]
    if F.shape[:2] != (ts.num_values, ts.T):
        raise ValueError("path features must be (num_paths, T, K)")
    probs = _target_probs(pop, ts, mode, design)
    pibar = probs.mean(axis=0)
    dsg = Design(np.tile(pibar, (pop.n, 1)), kind="implicit")
    unique = False
    per_column: list[list[ConditionCheck]] = []
    for k in range(F.shape[2]):
        checks = _path_uniqueness_conditions(F[:, :, k])
        per_column.append(checks)
        if identity_contrast and all(c.passed for c in checks):
            unique = True
    best = max(per_column, key=lambda cs: sum(c.passed for c in cs)) if per_column else []
    notes = []
    if unique:
        notes.append("constant design is the unique implicit design")
    elif identity_contrast:
        notes.append("uniqueness conditions not verified by any feature column")
    return CatalogResult(
        template="event_study",
        design=dsg,
        exists=True,
        estimand_form="TWFE_random",
        parameters={"pibar": pibar, "unique": unique},
        conditions=best,
        notes=notes,
    )
