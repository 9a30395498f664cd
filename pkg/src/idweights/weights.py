"""Potential weights and identification-strength diagnostics.

The potential weight of unit ``i`` at treatment value ``w`` is the k x T
matrix ``rho_i(w) = Lambda G^{-1} z(x_i, w)'`` — the weight the regression
contrast places on the unit's potential outcome vector per unit of
assignment probability.  Stacking the weights across treatment values gives
the per-unit matrix ``R_i`` whose singular values measure how strongly the
level-irrelevance equations pin down a design for that unit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .gram import GramMatrix
from .model import Population, RegressionSpec, TreatmentSet, regressor_tensor

__all__ = [
    "PotentialWeightSet",
    "WeightMatrixDiagnostic",
    "potential_weights",
    "estimator_weights",
    "point_estimate",
    "identification_strength",
    "export_weights_csv",
]

# sigma_iJ below this multiple of the population median triggers a
# weak-identification warning.
WEAK_ID_FACTOR = 1e-6


@dataclass(frozen=True)
class PotentialWeightSet:
    """Potential weights for every unit and treatment value.

    Attributes
    ----------
    rho : ndarray, shape (n, J+1, k, T)
        ``rho[i, j]`` is the k x T weight matrix at treatment value ``j``.
        Columns at unobserved periods are flagged absent via ``mask`` (they
        are zero in ``rho`` and excluded from every downstream sum).
    gram : GramMatrix
        The matrix that produced the weights.
    mode : str
        ``"population"`` or ``"estimated"``.
    """

    rho: np.ndarray
    gram: GramMatrix
    mode: str
    spec: RegressionSpec
    pop: Population
    ts: TreatmentSet

    @property
    def mask(self) -> np.ndarray:
        """Observed-period mask, shape (n, T)."""
        return self.pop.observed_periods

    @property
    def n(self) -> int:
        return self.rho.shape[0]

    @property
    def k(self) -> int:
        return self.rho.shape[2]

    def stacked(self) -> np.ndarray:
        """Per-unit matrices R_i = [rho_i(0), ..., rho_i(J)], shape (n, kT, J+1).

        Unobserved periods contribute zero rows, which leave singular
        values and the solution set of the level equations unchanged.
        """
        n, num_w, k, T = self.rho.shape
        flat = self.rho.reshape(n, num_w, k * T)
        return np.transpose(flat, (0, 2, 1))


@dataclass
class WeightMatrixDiagnostic:
    """Identification strength of the per-unit weight matrices.

    ``sigma`` holds the J-th largest singular value of each R_i (the one
    whose uniform positivity makes the implicit design unique);
    ``singular_values`` the full descending spectra.
    """

    sigma: np.ndarray  # (n,)
    singular_values: np.ndarray  # (n, min(kT, J+1)) descending
    unconstrained: np.ndarray  # (n,) bool: R_i identically zero
    weakly_identified: np.ndarray  # (n,) bool

    @property
    def population_min(self) -> float:
        active = self.sigma[~self.unconstrained]
        return float(active.min()) if active.size else 0.0


def potential_weights(
    spec: RegressionSpec,
    pop: Population,
    ts: TreatmentSet,
    gram: GramMatrix,
) -> PotentialWeightSet:
    """Compute ``rho_i(w) = Lambda G^{-1} z(x_i, w)'`` for all units and values.

    Raises ``SingularGramError`` when the Gram matrix is singular at the
    working cutoff.
    """
    Ginv = gram.inv()
    lam_g = spec.contrast @ Ginv  # (k, K)
    Z = regressor_tensor(spec, pop, ts)  # (n, J+1, T, K)
    rho = np.einsum("ab,ijtb->ijat", lam_g, Z, optimize=True)
    rho = rho * pop.observed_periods[:, None, None, :]
    rho.flags.writeable = False
    return PotentialWeightSet(
        rho=rho, gram=gram, mode=gram.mode, spec=spec, pop=pop, ts=ts
    )


def estimator_weights(pws: PotentialWeightSet) -> np.ndarray:
    """Realized weights ``rho_i(W_i)``, shape (n, k, T).

    Averaging ``rho_i(W_i) y_i`` over units reproduces the least-squares
    contrast; see :func:`point_estimate`.
    """
    if pws.mode != "estimated":
        raise ValueError("realized estimator weights require estimated-mode weights")
    idx = pws.pop.observed_treatment
    return pws.rho[np.arange(pws.n), idx]


def point_estimate(pws: PotentialWeightSet) -> np.ndarray:
    """The estimate ``(1/n) sum_i sum_t rho_it(W_i) Y_it`` (length k)."""
    w = estimator_weights(pws)  # (n, k, T)
    y = pws.pop.observed_outcomes * pws.pop.observed_periods
    return np.einsum("ikt,it->k", w, y) / pws.n


def identification_strength(pws: PotentialWeightSet) -> WeightMatrixDiagnostic:
    """Per-unit singular-value diagnostics of the stacked weight matrices."""
    R = pws.stacked()  # (n, kT, J+1)
    svals = np.linalg.svd(R, compute_uv=False)  # (n, min(kT, J+1)) descending
    J = pws.ts.J
    if J <= svals.shape[1]:
        sigma = svals[:, J - 1].copy()
    else:
        # Fewer equations than free design parameters: the J-th singular
        # value does not exist, identification necessarily fails.
        sigma = np.zeros(pws.n)
    scale = np.abs(pws.rho).max(initial=0.0)
    unconstrained = np.abs(R).max(axis=(1, 2)) <= 1e-12 * max(scale, 1.0)
    sigma[unconstrained] = 0.0
    active = sigma[~unconstrained]
    med = np.median(active) if active.size else 0.0
    weak = (~unconstrained) & (sigma < WEAK_ID_FACTOR * med)
    return WeightMatrixDiagnostic(
        sigma=sigma,
        singular_values=svals,
        unconstrained=unconstrained,
        weakly_identified=weak,
    )


def export_weights_csv(pws: PotentialWeightSet, path: str) -> None:
    """Write unit-level weights as CSV: unit, treatment_value, contrast_row, period, rho."""
    pop, ts = pws.pop, pws.ts
    unit_ids = pop.unit_ids or tuple(str(i) for i in range(pws.n))
    period_ids = pop.period_ids or tuple(str(t) for t in range(ts.T))
    labels = ts.labels or tuple(str(j) for j in range(ts.num_values))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "treatment_value", "contrast_row", "period", "rho"])
        for i in range(pws.n):
            for j in range(ts.num_values):
                for r in range(pws.k):
                    for t in range(ts.T):
                        if not pop.observed_periods[i, t]:
                            continue
                        writer.writerow(
                            [
                                unit_ids[i],
                                labels[j],
                                r,
                                period_ids[t],
                                format(pws.rho[i, j, r, t], ".17g"),
                            ]
                        )
