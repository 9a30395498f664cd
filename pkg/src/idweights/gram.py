"""Gram matrices, partialling-out, and reparametrization transforms.

The Gram matrix of a specification under a design is

    G = (1/n) sum_i sum_{t in T_i} sum_w pi_i(w) z_t(x_i, w) z_t(x_i, w)'

and its sample counterpart replaces ``pi_i`` with the point mass at the
observed treatment.  Imbalanced panels sum only over observed ``(i, t)``
pairs.  Everything downstream — potential weights, implicit designs — is a
function of a spec and one of these matrices, so this module also houses the
two spec-to-spec transforms that leave potential weights invariant:
residualization (partialling out) and linear reparametrization.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .model import Design, Population, RegressionSpec, TreatmentSet, regressor_tensor

__all__ = [
    "GramMatrix",
    "SingularGramError",
    "population_gram",
    "sample_gram",
    "fwl_residualize",
    "reparametrize",
]

# Relative eigenvalue cutoff below which a Gram matrix is treated as
# singular rather than silently pseudo-inverted.
EIG_CUTOFF = 1e-10


class SingularGramError(np.linalg.LinAlgError):
    """The Gram matrix is singular at the working cutoff."""


@dataclass(frozen=True)
class GramMatrix:
    """A K x K Gram matrix together with its provenance.

    ``source`` is ``"population"`` (some design's expectation),
    ``"sample"`` (point masses at observed treatments) or ``"candidate"``
    (a design under evaluation).  ``design`` records the design for the
    non-sample sources.
    """

    values: np.ndarray
    source: str
    design: Design | None = None
    min_eigenvalue: float = float("nan")

    def __post_init__(self) -> None:
        g = np.asarray(self.values, dtype=float)
        scale = np.abs(g).max(initial=0.0)
        if not np.allclose(g, g.T, rtol=0.0, atol=1e-12 * max(scale, 1.0)):
            raise ValueError("Gram matrix is not symmetric")
        g = 0.5 * (g + g.T)
        g.flags.writeable = False
        eigs = np.linalg.eigvalsh(g)
        if eigs[0] < -1e-10 * max(np.trace(g), 1e-300):
            raise ValueError(f"Gram matrix has negative eigenvalue {eigs[0]:.3e}")
        object.__setattr__(self, "values", g)
        object.__setattr__(self, "min_eigenvalue", float(eigs[0]))

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def mode(self) -> str:
        """Weight-set mode implied by the source tag."""
        return "estimated" if self.source == "sample" else "population"

    def inv(self) -> np.ndarray:
        """Invert via eigendecomposition.

        Raises
        ------
        SingularGramError
            If any eigenvalue falls below ``EIG_CUTOFF`` times the largest;
            the error message names the number of null directions.
        """
        vals, vecs = np.linalg.eigh(self.values)
        lam_max = vals[-1]
        if lam_max <= 0.0:
            raise SingularGramError("Gram matrix is identically zero")
        bad = vals < EIG_CUTOFF * lam_max
        if bad.any():
            raise SingularGramError(
                f"Gram matrix is singular: {int(bad.sum())} eigenvalue(s) below "
                f"{EIG_CUTOFF:g} of the largest"
            )
        return (vecs / vals) @ vecs.T

    def is_singular(self) -> bool:
        vals = np.linalg.eigvalsh(self.values)
        return bool(vals[0] < EIG_CUTOFF * max(vals[-1], 0.0)) or vals[-1] <= 0.0


def _masked_gram(Z: np.ndarray, probs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # Z: (n, J+1, T, K); probs: (n, J+1); mask: (n, T)
    n = Z.shape[0]
    weights = probs[:, :, None] * mask[:, None, :]  # (n, J+1, T)
    G = np.einsum("ijt,ijtk,ijtl->kl", weights, Z, Z, optimize=True) / n
    return 0.5 * (G + G.T)


def population_gram(
    spec: RegressionSpec,
    pop: Population,
    ts: TreatmentSet,
    design: Design,
    source: str = "population",
) -> GramMatrix:
    """Gram matrix of ``spec`` under ``design``.

    Linear in the design and restricted to observed periods; with a
    point-mass design this reproduces :func:`sample_gram` exactly.
    """
    if design.probs.shape != (pop.n, ts.num_values):
        raise ValueError("design shape does not match population/treatment set")
    Z = regressor_tensor(spec, pop, ts)
    G = _masked_gram(Z, design.probs, pop.observed_periods)
    return GramMatrix(G, source=source, design=design)


def sample_gram(spec: RegressionSpec, pop: Population, ts: TreatmentSet) -> GramMatrix:
    """Sample Gram matrix (point masses at the observed treatments)."""
    Z = regressor_tensor(spec, pop, ts)
    probs = Design.point_mass(pop.observed_treatment, ts.num_values).probs
    G = _masked_gram(Z, probs, pop.observed_periods)
    return GramMatrix(G, source="sample")


def fwl_residualize(
    spec: RegressionSpec, gram: GramMatrix, keep: Sequence[int]
) -> RegressionSpec:
    """Residualize the ``keep`` regressors against the rest.

    Replaces ``z_keep`` with ``z_keep - Gamma z_rest`` where ``Gamma`` is the
    projection coefficient computed from ``gram`` (population or sample,
    matching the gram's source); the contrast must load only on ``keep``.
    Potential weights computed from the residualized spec with its induced
    Gram matrix coincide with the original ones.
    """
    keep = np.asarray(sorted(set(int(j) for j in keep)), dtype=int)
    if keep.size == 0 or keep.max() >= spec.K:
        raise ValueError("keep indices out of range")
    rest = np.setdiff1d(np.arange(spec.K), keep)
    lam = spec.contrast
    if np.abs(lam[:, rest]).max(initial=0.0) > 0.0:
        raise ValueError("contrast loads on regressors being partialled out")
    if rest.size == 0:
        return replace(spec, contrast=lam[:, keep])

    G = gram.values
    G22 = G[np.ix_(rest, rest)]
    G12 = G[np.ix_(keep, rest)]
    vals, vecs = np.linalg.eigh(G22)
    if vals[0] < EIG_CUTOFF * max(vals[-1], 1e-300):
        raise SingularGramError("the partialled-out block of the Gram matrix is singular")
    Gamma = G12 @ (vecs / vals) @ vecs.T  # (|keep|, |rest|)

    base_transform = spec.transform
    base_batch = spec.batch

    def transform(i, t, w):
        z = np.asarray(base_transform(i, t, w))
        return z[keep] - Gamma @ z[rest]

    batch = None
    if base_batch is not None:
        def batch(p, values):
            Z = np.asarray(base_batch(p, values))
            return Z[..., keep] - Z[..., rest] @ Gamma.T

    return RegressionSpec(
        transform,
        keep.size,
        lam[:, keep],
        within_demeaned=spec.within_demeaned,
        template_tag=spec.template_tag,
        batch=batch,
    )


def reparametrize(spec: RegressionSpec, M: np.ndarray) -> RegressionSpec:
    """Apply the invertible change of regressors ``z -> M z``.

    The coefficients transform inversely, so the contrast becomes
    ``Lambda M'`` and every downstream potential weight is unchanged.
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (spec.K, spec.K):
        raise ValueError("M must be K x K")
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond >= 1e12:
        raise np.linalg.LinAlgError(f"reparametrization matrix is ill-conditioned ({cond:.3e})")
    lam_new = spec.contrast @ M.T  # leaves Lambda G^-1 z invariant

    base_transform = spec.transform
    base_batch = spec.batch

    def transform(i, t, w):
        return M @ np.asarray(base_transform(i, t, w))

    batch = None
    if base_batch is not None:
        def batch(p, values):
            return np.asarray(base_batch(p, values)) @ M.T

    return RegressionSpec(
        transform,
        spec.K,
        lam_new,
        within_demeaned=spec.within_demeaned,
        template_tag=spec.template_tag,
        batch=batch,
    )
