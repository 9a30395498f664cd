"""Solve the per-unit level-irrelevance system for implicit designs.

For each unit the system is

    sum_w pi_i(w) rho_i(w) = 0      (kT equations)
    sum_w pi_i(w)          = 1      (1 equation)

in the J+1 unknowns ``pi_i(.)``.  Stacked, that is an ``(kT+1) x (J+1)``
linear system solved by SVD; the rank decides between a unique solution, an
underdetermined affine set, or no solution.  A unit whose weight matrix is
identically zero is unconstrained — any probability vector works.

A full design, when one exists, is then judged on two further axes:
properness (no negative entries) and Gram consistency (the design reproduces
the Gram matrix that generated the weights).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .estimand import ImplicitEstimand, implicit_estimand
from .gram import GramMatrix, _masked_gram, population_gram
from .model import Design, Population, RegressionSpec, TreatmentSet, regressor_tensor
from .weights import PotentialWeightSet, potential_weights

__all__ = [
    "SolverOptions",
    "UnitSolveStatus",
    "ImplicitDesignReport",
    "MembershipReport",
    "solve_implicit_design",
    "binary_closed_form",
    "check_candidate_design",
]


@dataclass(frozen=True)
class SolverOptions:
    """Numerical policy for the per-unit solves.

    rank_cutoff : relative singular-value threshold deciding rank.
    residual_tol : relative least-squares residual above which the system
        is declared inconsistent (no solution).
    proper_tol : entries below ``-proper_tol`` make a row improper.
    gram_rtol_population / gram_rtol_estimated : entrywise relative
        tolerances for the Gram-consistency comparison.  In estimated mode
        the default band additionally widens to ``10 / sqrt(n)`` — a plug-in
        design rarely reproduces a sample Gram matrix exactly.
    """

    rank_cutoff: float = 1e-9
    residual_tol: float = 1e-8
    proper_tol: float = 1e-10
    gram_rtol_population: float = 1e-10
    gram_rtol_estimated: float = 1e-6
    estimated_band_scale: float = 10.0

    def gram_tolerance(self, mode: str, n: int) -> float:
        if mode == "population":
            return self.gram_rtol_population
        return max(self.gram_rtol_estimated, self.estimated_band_scale / np.sqrt(n))


DEFAULT_OPTIONS = SolverOptions()


@dataclass
class UnitSolveStatus:
    """Outcome of one unit's solve.

    ``status`` is one of ``unique``, ``none``, ``underdetermined``,
    ``unconstrained``.  ``design_row`` holds the solution (the affine base
    point for underdetermined units, a proper point when the feasibility
    program finds one); ``residual`` is the sup-norm of
    ``sum_w pi(w) rho(w)`` at that point.
    """

    status: str
    design_row: np.ndarray | None
    residual: float
    proper: bool
    nullspace: np.ndarray | None = None  # (J+1, nullity) basis when underdetermined


@dataclass
class ImplicitDesignReport:
    """Existence, uniqueness, properness and Gram-consistency verdicts."""

    per_unit: list[UnitSolveStatus]
    design: Design | None
    gram_consistent: bool | None
    gram_discrepancy: float
    gram_tolerance: float
    verdict: str  # tenable | improper | nonexistent | gram_inconsistent
    estimand: ImplicitEstimand | None
    mode: str

    def status_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for u in self.per_unit:
            counts[u.status] = counts.get(u.status, 0) + 1
        return counts

    def to_json_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "mode": self.mode,
            "status_counts": self.status_counts(),
            "gram_consistent": self.gram_consistent,
            "gram_discrepancy": self.gram_discrepancy,
            "gram_tolerance": self.gram_tolerance,
            "max_residual": max((u.residual for u in self.per_unit), default=0.0),
            "improper_units": int(sum(not u.proper for u in self.per_unit)),
        }


def _proper_point_in_affine_set(
    R: np.ndarray, tol: float
) -> np.ndarray | None:
    """Find a proper solution of R pi = 0, 1'pi = 1, pi >= 0 if one exists."""
    m, q = R.shape
    A_eq = np.vstack([R, np.ones((1, q))])
    b_eq = np.zeros(m + 1)
    b_eq[-1] = 1.0
    res = linprog(
        c=np.zeros(q),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=[(0.0, 1.0)] * q,
        method="highs",
    )
    if res.status == 0 and res.x is not None:
        x = np.asarray(res.x)
        if np.abs(R @ x).max(initial=0.0) <= max(tol, 1e-7):
            return x
    return None


def solve_implicit_design(
    pws: PotentialWeightSet,
    pop: Population | None = None,
    options: SolverOptions = DEFAULT_OPTIONS,
) -> ImplicitDesignReport:
    """Solve the level-irrelevance system for every unit and classify.

    Parameters
    ----------
    pws : PotentialWeightSet
        Weights (and the Gram matrix used) for the specification.
    pop : Population, optional
        Defaults to the population carried by ``pws``.

    Returns
    -------
    ImplicitDesignReport
        The verdict is ``tenable`` only when every unit admits a proper
        solution (unique, unconstrained, or a proper point of an
        underdetermined set) and the assembled design is Gram-consistent.
    """
    pop = pop or pws.pop
    ts = pws.ts
    n, q = pws.n, ts.num_values
    R = pws.stacked()  # (n, kT, J+1); zero rows at unobserved periods
    scale = np.abs(R).max(axis=(1, 2))  # per-unit weight scale
    global_scale = max(scale.max(initial=0.0), 1.0)

    # Stacked (kT+1) x (J+1) systems [R; 1'] pi = [0; 1], batched SVD.
    ones_row = np.ones((n, 1, q))
    A = np.concatenate([R, ones_row], axis=1)
    b = np.zeros((n, A.shape[1]))
    b[:, -1] = 1.0
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    s_max = s[:, 0]
    rank = (s > options.rank_cutoff * s_max[:, None]).sum(axis=1)
    # Minimum-norm least-squares solution per unit: x = V S^+ U' b.
    Utb = np.einsum("imp,im->ip", U, b)
    inv_s = np.where(
        s > options.rank_cutoff * s_max[:, None], 1.0 / np.where(s == 0, 1.0, s), 0.0
    )
    x = np.einsum("ipq,ip->iq", Vt, inv_s * Utb)

    unconstrained = np.abs(R).max(axis=(1, 2)) <= 1e-12 * global_scale
    per_unit: list[UnitSolveStatus] = []
    rows = np.empty((n, q))
    all_solvable = True

    for i in range(n):
        if unconstrained[i]:
            # Any probability vector satisfies the level equations; record
            # the uniform reference point.
            row = np.full(q, 1.0 / q)
            per_unit.append(UnitSolveStatus("unconstrained", row, 0.0, True))
            rows[i] = row
            continue
        xi = x[i]
        # Re-center onto the sum-to-one hyperplane (no-op when consistent).
        xi = xi + (1.0 - xi.sum()) / q
        resid_level = np.abs(R[i] @ xi).max(initial=0.0)
        tol_i = options.residual_tol * max(scale[i], 1e-300)
        if resid_level > tol_i:
            per_unit.append(UnitSolveStatus("none", None, float(resid_level), False))
            all_solvable = False
            continue
        nullity = q - rank[i]
        if nullity > 0:
            # The reduced decomposition can omit null directions; take them
            # from a full SVD of this unit's system.
            _, _, Vt_full = np.linalg.svd(A[i], full_matrices=True)
            basis = Vt_full[rank[i]:, :].T  # (q, nullity)
            point = _proper_point_in_affine_set(R[i], tol_i)
            proper = point is not None
            row = point if point is not None else xi
            resid = float(np.abs(R[i] @ row).max(initial=0.0))
            per_unit.append(
                UnitSolveStatus("underdetermined", row, resid, proper, nullspace=basis)
            )
            rows[i] = row
        else:
            proper = bool(xi.min() >= -options.proper_tol)
            per_unit.append(UnitSolveStatus("unique", xi, float(resid_level), proper))
            rows[i] = xi

    if not all_solvable:
        return ImplicitDesignReport(
            per_unit=per_unit,
            design=None,
            gram_consistent=None,
            gram_discrepancy=float("nan"),
            gram_tolerance=float("nan"),
            verdict="nonexistent",
            estimand=None,
            mode=pws.mode,
        )

    # Rows can carry tiny residual drift; renormalize exactly for the Design.
    rows = rows / rows.sum(axis=1, keepdims=True)
    design = Design(rows, kind="implicit" if pws.mode == "population" else "estimated")
    all_proper = all(u.proper for u in per_unit)

    # An improper solved design is a signed measure, so its "Gram" need not
    # be PSD; compute the raw matrix rather than a validated GramMatrix.
    Z_check = regressor_tensor(pws.spec, pop, ts)
    G_pi = _masked_gram(Z_check, design.probs, pop.observed_periods)
    G_ref = pws.gram.values
    disc = float(np.abs(G_pi - G_ref).max(initial=0.0))
    g_scale = max(np.abs(G_ref).max(initial=0.0), 1e-300)
    gram_tol = options.gram_tolerance(pws.mode, n)
    gram_ok = disc <= gram_tol * g_scale

    if not all_proper:
        verdict = "improper"
    elif not gram_ok:
        verdict = "gram_inconsistent"
    else:
        verdict = "tenable"

    est = implicit_estimand(design, pws)
    return ImplicitDesignReport(
        per_unit=per_unit,
        design=design,
        gram_consistent=bool(gram_ok),
        gram_discrepancy=disc,
        gram_tolerance=float(gram_tol * g_scale),
        verdict=verdict,
        estimand=est,
        mode=pws.mode,
    )


def binary_closed_form(
    pws: PotentialWeightSet, options: SolverOptions = DEFAULT_OPTIONS
) -> ImplicitDesignReport:
    """Closed-form solve for the scalar binary case (k = T = J = 1).

    ``pi_i = -rho_i(0) / (rho_i(1) - rho_i(0))``.  The design exists for a
    unit iff the two weights differ (or both vanish); it is proper iff the
    weights do not share a strict sign.  Agrees with
    :func:`solve_implicit_design` wherever both are defined.
    """
    ts = pws.ts
    if pws.k != 1 or ts.T != 1 or ts.num_values != 2:
        raise ValueError("binary closed form requires k = T = 1 and two treatment values")
    rho0 = pws.rho[:, 0, 0, 0]
    rho1 = pws.rho[:, 1, 0, 0]
    n = pws.n
    scale = np.maximum(np.maximum(np.abs(rho0), np.abs(rho1)), 1e-300)
    diff = rho1 - rho0
    unconstrained = (rho0 == 0.0) & (rho1 == 0.0)
    degenerate = (np.abs(diff) <= 1e-14 * scale) & ~unconstrained

    pi = np.full(n, 0.5)
    ok = ~unconstrained & ~degenerate
    pi[ok] = -rho0[ok] / diff[ok]

    per_unit: list[UnitSolveStatus] = []
    rows = np.column_stack([1.0 - pi, pi])
    all_solvable = True
    for i in range(n):
        if unconstrained[i]:
            per_unit.append(
                UnitSolveStatus("unconstrained", np.array([0.5, 0.5]), 0.0, True)
            )
            rows[i] = (0.5, 0.5)
        elif degenerate[i]:
            # Equal nonzero weights: pi rho1 + (1-pi) rho0 = rho0 != 0.
            per_unit.append(UnitSolveStatus("none", None, float(np.abs(rho0[i])), False))
            all_solvable = False
        else:
            resid = float(np.abs(pi[i] * rho1[i] + (1 - pi[i]) * rho0[i]))
            proper = not (rho0[i] * rho1[i] > 0.0)
            per_unit.append(
                UnitSolveStatus("unique", rows[i].copy(), resid, proper)
            )

    if not all_solvable:
        return ImplicitDesignReport(
            per_unit=per_unit,
            design=None,
            gram_consistent=None,
            gram_discrepancy=float("nan"),
            gram_tolerance=float("nan"),
            verdict="nonexistent",
            estimand=None,
            mode=pws.mode,
        )

    design = Design(rows, kind="implicit" if pws.mode == "population" else "estimated")
    G_pi = population_gram(pws.spec, pws.pop, ts, design, source="candidate")
    G_ref = pws.gram.values
    disc = float(np.abs(G_pi.values - G_ref).max(initial=0.0))
    g_scale = max(np.abs(G_ref).max(initial=0.0), 1e-300)
    gram_tol = options.gram_tolerance(pws.mode, pws.n)
    gram_ok = disc <= gram_tol * g_scale
    all_proper = all(u.proper for u in per_unit)
    verdict = (
        "improper" if not all_proper else ("tenable" if gram_ok else "gram_inconsistent")
    )
    return ImplicitDesignReport(
        per_unit=per_unit,
        design=design,
        gram_consistent=bool(gram_ok),
        gram_discrepancy=disc,
        gram_tolerance=float(gram_tol * g_scale),
        verdict=verdict,
        estimand=implicit_estimand(design, pws),
        mode=pws.mode,
    )


@dataclass
class MembershipReport:
    """Result of checking a candidate design against the three membership
    conditions: level irrelevance, properness, and Gram closeness.

    The level-irrelevance weights are recomputed at the Gram matrix the
    candidate itself induces, so a passing candidate is self-consistent.
    """

    level_irrelevance_pass: bool
    level_irrelevance_residual: float
    proper_pass: bool
    min_entry: float
    gram_pass: bool
    gram_worst_gap: float
    details: dict = field(default_factory=dict)

    @property
    def admissible(self) -> bool:
        return self.level_irrelevance_pass and self.proper_pass and self.gram_pass

    def to_json_dict(self) -> dict:
        return {
            "level_irrelevance": {
                "pass": self.level_irrelevance_pass,
                "max_residual": self.level_irrelevance_residual,
            },
            "proper": {"pass": self.proper_pass, "min_entry": self.min_entry},
            "gram": {"pass": self.gram_pass, "worst_gap": self.gram_worst_gap},
            "admissible": self.admissible,
        }


def check_candidate_design(
    candidate: Design,
    spec: RegressionSpec,
    pop: Population,
    ts: TreatmentSet,
    gram_band: float | np.ndarray,
    reference_gram: GramMatrix,
    options: SolverOptions = DEFAULT_OPTIONS,
) -> MembershipReport:
    """Check whether a candidate design is an admissible justification.

    Parameters
    ----------
    gram_band : float or ndarray
        Elementwise absolute tolerance for ``|G(candidate) - G_ref|``; a
        scalar broadcasts over entries.
    reference_gram : GramMatrix
        Typically the sample Gram matrix.
    """
    G_c = population_gram(spec, pop, ts, candidate, source="candidate")
    level_resid = float("inf")
    level_pass = False
    try:
        pws_c = potential_weights(spec, pop, ts, G_c)
        R = pws_c.stacked()  # (n, kT, J+1)
        resid = np.einsum("imq,iq->im", R, candidate.probs)
        level_resid = float(np.abs(resid).max(initial=0.0))
        scale = max(np.abs(R).max(initial=0.0), 1e-300)
        level_pass = level_resid <= options.residual_tol * scale
    except np.linalg.LinAlgError:
        pass  # singular candidate Gram: level irrelevance fails outright

    min_entry = float(candidate.probs.min())
    proper_pass = min_entry >= -options.proper_tol

    band = np.broadcast_to(np.asarray(gram_band, dtype=float), G_c.values.shape)
    gaps = np.abs(G_c.values - reference_gram.values) - band
    gram_worst = float(gaps.max(initial=-np.inf))
    gram_pass = bool(gram_worst <= 0.0)

    return MembershipReport(
        level_irrelevance_pass=bool(level_pass),
        level_irrelevance_residual=level_resid,
        proper_pass=bool(proper_pass),
        min_entry=min_entry,
        gram_pass=gram_pass,
        gram_worst_gap=gram_worst,
    )


def design_to_csv(report: ImplicitDesignReport, ts: TreatmentSet, path: str) -> None:
    """Export a solved design as CSV: unit, w, pi."""
    import csv as _csv

    if report.design is None:
        raise ValueError("no design to export")
    labels = ts.labels or tuple(str(j) for j in range(ts.num_values))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["unit", "w", "pi"])
        for i in range(report.design.n):
            for j in range(ts.num_values):
                writer.writerow([i, labels[j], format(report.design.probs[i, j], ".17g")])
