"""Implicit estimand weights and their decompositions.

Given a design ``pi`` and potential weights ``rho``, the estimand the
regression contrast targets is

    tau = (1/n) sum_i sum_w omega_i(pi, w) y_i(w),
    omega_i(pi, w) = pi_i(w) rho_i(w).

This module computes the omega weights, summarizes them (weighted-ATE form
in the scalar binary case, contamination across off-target arms in the
multivalued case, per-period weights in the two-way fixed-effects case), and
flags negative effect weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Design, TreatmentSet
from .weights import PotentialWeightSet

__all__ = [
    "ImplicitEstimand",
    "implicit_estimand",
    "contamination_decomposition",
    "twfe_weights",
    "TwfeWeightTable",
    "NEGATIVITY_TOL",
]

# Strictly-below-this counts as a negative weight; keeps FP noise around
# zero out of the flags.
NEGATIVITY_TOL = -1e-12


@dataclass
class ImplicitEstimand:
    """Estimand weights ``omega_i(pi, w)`` and summaries.

    Attributes
    ----------
    omega : ndarray, shape (n, J+1, k, T)
    wate : ndarray or None
        Scalar binary case only: ``omega_i = pi_i rho_i(1)``; the estimand
        is the corresponding weighted average of unit effects, and
        ``omega_i(pi, 1) = -omega_i(pi, 0)``.
    wate_mean : float or None
        ``(1/n) sum_i omega_i``; equals 1 for ATE-normalized templates.
    contamination : ndarray or None, shape (k, J+1)
        Cross-sectional case with one contrast row per nonzero arm: total
        absolute omega mass each contrast places on each arm; entries at
        arms outside {0, target} are contamination.
    negativity : list of (unit, arm, contrast_row, period, value)
        Cells with weight below ``NEGATIVITY_TOL`` on a treated coordinate.
    """

    omega: np.ndarray
    zero_sum_gap: float
    wate: np.ndarray | None = None
    wate_mean: float | None = None
    contamination: np.ndarray | None = None
    contamination_mass: np.ndarray | None = None
    negativity: list[tuple[int, int, int, int, float]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.omega.shape[0]

    def estimand_value(self, potential_outcomes: np.ndarray) -> np.ndarray:
        """Evaluate ``(1/n) sum_{i,w,t} omega y`` for a (n, J+1, T) table."""
        y = np.asarray(potential_outcomes, dtype=float)
        return np.einsum("ijkt,ijt->k", self.omega, y) / self.n


def implicit_estimand(design: Design, pws: PotentialWeightSet) -> ImplicitEstimand:
    """Compute the estimand weights of a design under the given potential weights."""
    if design.probs.shape[:2] != pws.rho.shape[:2]:
        raise ValueError("design and weights disagree on n or number of arms")
    omega = design.probs[:, :, None, None] * pws.rho  # (n, J+1, k, T)
    zero_sum_gap = float(np.abs(omega.sum(axis=1)).max(initial=0.0))

    ts = pws.ts
    wate = None
    wate_mean = None
    if ts.T == 1 and ts.num_values == 2 and pws.k == 1:
        wate = omega[:, 1, 0, 0].copy()
        wate_mean = float(wate.mean())

    contamination = None
    contamination_mass = None
    if ts.T == 1 and pws.k == ts.J:
        # Contrast row j targets arm j+1 by the template convention.
        cells = omega[:, :, :, 0]  # (n, J+1, k)
        per_arm = np.abs(cells).sum(axis=0).T / pws.n  # (k, J+1)
        contamination = per_arm
        mass = per_arm.copy()
        for j in range(pws.k):
            mass[j, 0] = 0.0
            mass[j, j + 1] = 0.0
        contamination_mass = mass.sum(axis=1)

    negativity: list[tuple[int, int, int, int, float]] = []
    treated = ts.values > 0.0  # (J+1, T): treated coordinates of each arm
    bad = (omega < NEGATIVITY_TOL) & treated[None, :, None, :]
    for i, j, r, t in zip(*np.nonzero(bad)):
        negativity.append((int(i), int(j), int(r), int(t), float(omega[i, j, r, t])))

    return ImplicitEstimand(
        omega=omega,
        zero_sum_gap=zero_sum_gap,
        wate=wate,
        wate_mean=wate_mean,
        contamination=contamination,
        contamination_mass=contamination_mass,
        negativity=negativity,
    )


@dataclass
class DecompositionRow:
    group: tuple
    contrast_row: int
    arm: int
    group_share: float
    mean_omega: float
    coefficient: float  # group_share * mean_omega


@dataclass
class DecompositionTable:
    """tau_j as a group-by-arm weighted sum of mean potential-outcome contrasts.

    Exact when the omega weights are constant within every group (the
    ``within_group_constant`` flag); then

        tau_j = sum_{g, l >= 1} coefficient[g, l, j] * mean_{i in g}(y_i(l) - y_i(0)).
    """

    rows: list[DecompositionRow]
    within_group_constant: bool

    def coefficient(self, group: tuple, contrast_row: int, arm: int) -> float:
        for r in self.rows:
            if r.group == group and r.contrast_row == contrast_row and r.arm == arm:
                return r.coefficient
        raise KeyError((group, contrast_row, arm))

    def evaluate(self, group_effects: dict[tuple, np.ndarray]) -> np.ndarray:
        """Combine per-group mean effects (arrays of shape (J,)) into tau."""
        k = max(r.contrast_row for r in self.rows) + 1
        tau = np.zeros(k)
        for r in self.rows:
            tau[r.contrast_row] += r.coefficient * group_effects[r.group][r.arm - 1]
        return tau

    def to_json_dict(self) -> dict:
        return {
            "within_group_constant": self.within_group_constant,
            "rows": [
                {
                    "group": list(r.group),
                    "contrast_row": r.contrast_row,
                    "arm": r.arm,
                    "group_share": r.group_share,
                    "mean_omega": r.mean_omega,
                    "coefficient": r.coefficient,
                }
                for r in self.rows
            ],
        }


def contamination_decomposition(
    est: ImplicitEstimand,
    covariates: np.ndarray,
    grouping: np.ndarray | None = None,
) -> DecompositionTable:
    """Decompose a cross-sectional estimand into group-level effect contrasts.

    Parameters
    ----------
    grouping : ndarray of int, optional
        Unit partition labels; defaults to grouping by distinct covariate
        rows.

    Uses the per-unit zero-sum identity to rewrite each unit's contribution
    as arm-versus-0 contrasts, then aggregates by group.
    """
    omega = est.omega
    n, num_arms, k, T = omega.shape
    if T != 1:
        raise ValueError("decomposition applies to cross-sections")
    if grouping is None:
        _, grouping = np.unique(np.atleast_2d(covariates), axis=0, return_inverse=True)
    grouping = np.asarray(grouping)

    rows: list[DecompositionRow] = []
    constant = True
    x2 = np.atleast_2d(covariates)
    for g in np.unique(grouping):
        members = grouping == g
        n_g = int(members.sum())
        share = n_g / n
        group_key = tuple(np.round(x2[members][0], 12)) if x2.size else (int(g),)
        cells = omega[members, :, :, 0]  # (n_g, J+1, k)
        spread = np.abs(cells - cells.mean(axis=0)).max(initial=0.0)
        if spread > 1e-10:
            constant = False
        mean_cells = cells.mean(axis=0)  # (J+1, k)
        for j in range(k):
            for arm in range(1, num_arms):
                mean_om = float(mean_cells[arm, j])
                rows.append(
                    DecompositionRow(
                        group=group_key,
                        contrast_row=j,
                        arm=arm,
                        group_share=share,
                        mean_omega=mean_om,
                        coefficient=share * mean_om,
                    )
                )
    return DecompositionTable(rows=rows, within_group_constant=constant)


@dataclass
class TwfeWeightTable:
    """Per-(period, path) weights of the two-way fixed-effects estimand."""

    g: np.ndarray  # (J+1, T): centered path deviations
    weights: np.ndarray  # (J+1, T): omega_t(pi, w)
    forbidden: list[tuple[int, int]]  # (arm, period) with treated negative weight

    @property
    def has_forbidden_comparisons(self) -> bool:
        return bool(self.forbidden)


def twfe_weights(design: Design, ts: TreatmentSet) -> TwfeWeightTable:
    """Estimand weights of the two-way fixed-effects contrast.

    Requires a design that is constant across units.  With
    ``w_pi = sum_w pi(w) w`` the centered deviation is

        g_t(w) = w_t - w_{pi,t} - (1'w - 1'w_pi) / T

    and the weight on ``y_t(w)`` is ``pi(w) g_t(w)`` normalized by
    ``sum_{t,w} pi(w) g_t(w)^2``.  Treated cells (``w_t = 1``) with a
    negative weight are flagged as forbidden comparisons.
    """
    probs = design.probs
    if np.abs(probs - probs[0]).max(initial=0.0) > 1e-10:
        raise ValueError("two-way FE weights require a design constant across units")
    pi = probs[0]  # (J+1,)
    Wv = ts.values  # (J+1, T)
    T = ts.T
    w_pi = pi @ Wv  # (T,)
    g = Wv - w_pi[None, :] - (Wv.sum(axis=1, keepdims=True) - w_pi.sum()) / T
    denom = float((pi[:, None] * g**2).sum())
    if denom <= 0.0:
        raise ValueError("degenerate treatment variation: zero residual variance")
    weights = pi[:, None] * g / denom
    forbidden = [
        (int(j), int(t))
        for j, t in zip(*np.nonzero((Wv > 0.0) & (weights < NEGATIVITY_TOL)))
    ]
    return TwfeWeightTable(g=g, weights=weights, forbidden=forbidden)
