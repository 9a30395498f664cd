"""Core data model: treatment sets, populations, designs, and regression
specifications.

The objects here are deliberately plain containers.  Everything downstream
(Gram matrices, potential weights, design solving) consumes them read-only,
so all types freeze their array fields after construction and can be shared
across threads.

Conventions used throughout the package:

* ``n`` units, indexed ``i = 0..n-1``; ``T`` periods, ``t = 0..T-1``
  (cross-sections are the ``T = 1`` special case).
* The treatment set ``W`` has ``J+1`` values, each a length-``T`` real
  vector; arm ``0`` is conventionally the comparison arm.
* A *design* assigns each unit a probability vector over the ``J+1`` arms.
* A regression specification maps ``(i, t, w)`` to a ``K``-vector of
  regressors ``z_t(x_i, w)`` and carries a ``k x K`` contrast matrix used to
  read the coefficients of interest off the stacked regression.
"""

from __future__ import annotations

import csv
import io
import warnings as _warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "TreatmentSet",
    "Population",
    "PotentialOutcomeTable",
    "Design",
    "RegressionSpec",
    "ValidationReport",
    "validate_population",
    "build_template",
    "regressor_tensor",
    "load_long_csv",
    "panel_covariates",
    "ROW_SUM_TOL",
]

# Designs must have rows summing to one within this tolerance.  Improper
# designs (negative entries) still satisfy it; properness is a verdict
# computed elsewhere, never a construction-time invariant.
ROW_SUM_TOL = 1e-10


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class TreatmentSet:
    """The ordered set of treatment values.

    Parameters
    ----------
    values : ndarray, shape (J+1, T)
        One row per treatment value; each row is the length-``T`` real
        vector the regressors consume.  Cross-sections use ``T = 1``.
    labels : tuple of str, optional
        Display names, one per value.
    """

    values: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if vals.shape[0] < 2:
            raise ValueError("a treatment set needs at least two values")
        if len({tuple(row) for row in vals}) != vals.shape[0]:
            raise ValueError("treatment values must be distinct")
        if self.labels is not None and len(self.labels) != vals.shape[0]:
            raise ValueError("labels must match the number of treatment values")
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def num_values(self) -> int:
        return self.values.shape[0]

    @property
    def J(self) -> int:
        return self.values.shape[0] - 1

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def is_staggered(self) -> bool:
        """True when every value is a 0/1 path that never switches off."""
        v = self.values
        binary = np.all((v == 0.0) | (v == 1.0))
        monotone = bool(np.all(np.diff(v, axis=1) >= 0.0)) if v.shape[1] > 1 else True
        return bool(binary and monotone)

    @staticmethod
    def binary() -> "TreatmentSet":
        """The cross-sectional binary set {0, 1}."""
        return TreatmentSet(np.array([[0.0], [1.0]]), labels=("control", "treated"))

    @staticmethod
    def arms(J: int) -> "TreatmentSet":
        """Cross-sectional multivalued set {0, 1, ..., J} (arm labels as values)."""
        return TreatmentSet(np.arange(J + 1, dtype=float)[:, None])

    @staticmethod
    def staggered(adoption_dates: Sequence[int | None], T: int) -> "TreatmentSet":
        """Build staggered-adoption paths from first-treated periods.

        ``None`` encodes never-treated.  Dates are 0-based period indices.
        """
        rows = []
        labels = []
        for date in adoption_dates:
            w = np.zeros(T)
            if date is not None:
                if not 0 <= date < T:
                    raise ValueError(f"adoption date {date} outside 0..{T - 1}")
                w[date:] = 1.0
            rows.append(w)
            labels.append("never" if date is None else f"adopt@{date}")
        return TreatmentSet(np.array(rows), labels=tuple(labels))


@dataclass(frozen=True)
class Population:
    """A finite population of units with fixed covariates.

    Parameters
    ----------
    covariates : ndarray, shape (n, d)
        Fixed unit characteristics.  Time-varying covariates are stored
        wide (one column per covariate-period pair); see
        :func:`panel_covariates`.
    observed_treatment : ndarray of int, shape (n,)
        Index of each unit's realized value in the treatment set.
    observed_outcomes : ndarray, shape (n, T)
        Realized outcomes.  Entries outside ``observed_periods`` are
        ignored by every computation and zeroed on construction.
    observed_periods : ndarray of bool, shape (n, T), optional
        The per-unit set of observed periods (imbalanced panels).  Default
        all-observed.
    """

    covariates: np.ndarray
    observed_treatment: np.ndarray
    observed_outcomes: np.ndarray
    observed_periods: np.ndarray | None = None
    unit_ids: tuple[str, ...] | None = None
    period_ids: tuple[str, ...] | None = None
    covariate_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        x = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        w = np.asarray(self.observed_treatment, dtype=int)
        y = np.atleast_2d(np.asarray(self.observed_outcomes, dtype=float))
        if y.shape[0] != x.shape[0] or w.shape != (x.shape[0],):
            raise ValueError("covariates, treatments and outcomes disagree on n")
        mask = self.observed_periods
        if mask is None:
            mask = np.ones(y.shape, dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != y.shape:
            raise ValueError("observed_periods must match outcomes' shape")
        y = np.where(mask, y, 0.0)
        object.__setattr__(self, "covariates", _freeze(x))
        object.__setattr__(self, "observed_treatment", _freeze(w))
        object.__setattr__(self, "observed_outcomes", _freeze(y))
        object.__setattr__(self, "observed_periods", _freeze(mask))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def T(self) -> int:
        return self.observed_outcomes.shape[1]


@dataclass(frozen=True)
class PotentialOutcomeTable:
    """Full table of potential outcomes ``y_i(w)`` (simulation / oracle use).

    ``y`` has shape ``(n, J+1, T)``.
    """

    y: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "y", _freeze(np.asarray(self.y, dtype=float)))

    def realized(self, pop: Population) -> np.ndarray:
        """The slice at each unit's observed treatment, shape (n, T)."""
        return self.y[np.arange(self.y.shape[0]), pop.observed_treatment, :]


@dataclass(frozen=True)
class Design:
    """Per-unit probability vectors over the treatment set.

    ``probs`` has shape ``(n, J+1)``.  Rows must sum to one within
    ``ROW_SUM_TOL``; entries may be negative (improper designs are data,
    their properness is judged downstream).
    """

    probs: np.ndarray
    kind: str = "candidate"

    _KINDS = ("true", "implicit", "estimated", "patched", "candidate")

    def __post_init__(self) -> None:
        p = np.atleast_2d(np.asarray(self.probs, dtype=float))
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown design kind {self.kind!r}")
        gap = np.abs(p.sum(axis=1) - 1.0)
        if gap.max(initial=0.0) > ROW_SUM_TOL:
            worst = int(np.argmax(gap))
            raise ValueError(
                f"design row {worst} sums to {p[worst].sum():.17g}, not 1"
            )
        object.__setattr__(self, "probs", _freeze(p))

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    def is_proper(self, tol: float = 1e-10) -> bool:
        return bool(self.probs.min() >= -tol)

    @staticmethod
    def constant(probs_row: Sequence[float], n: int, kind: str = "candidate") -> "Design":
        row = np.asarray(probs_row, dtype=float)
        return Design(np.tile(row, (n, 1)), kind=kind)

    @staticmethod
    def point_mass(treatment_idx: np.ndarray, num_values: int) -> "Design":
        """The degenerate design putting mass 1 on each observed treatment."""
        idx = np.asarray(treatment_idx, dtype=int)
        p = np.zeros((idx.shape[0], num_values))
        p[np.arange(idx.shape[0]), idx] = 1.0
        return Design(p, kind="estimated")


@dataclass(frozen=True)
class RegressionSpec:
    """A linear regression specification.

    Parameters
    ----------
    transform : callable ``(i, t, w) -> (K,) ndarray``
        Regressor vector for unit ``i`` in period ``t`` (0-based) under
        treatment value ``w`` (a length-``T`` vector).  Must depend on the
        unit only through fixed characteristics — never on realized
        treatments or outcomes.
    K : int
        Number of regressors.
    contrast : ndarray, shape (k, K)
        The matrix reading the coefficients of interest off the regression.
    within_demeaned : bool
        Asserts ``sum_t z_t(x_i, w) = 0`` over each unit's observed
        periods (unit fixed effects specified via the within
        transformation).
    template_tag : str, optional
        Identifier of the catalog template that produced the spec.
    batch : callable, optional
        Vectorized evaluator ``(pop, values) -> (n, J+1, T, K)`` that must
        agree with ``transform`` entry by entry; used for speed when
        present.
    """

    transform: Callable[[int, int, np.ndarray], np.ndarray]
    K: int
    contrast: np.ndarray
    within_demeaned: bool = False
    template_tag: str | None = None
    batch: Callable[[Population, np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        lam = np.atleast_2d(np.asarray(self.contrast, dtype=float))
        if lam.shape[1] != self.K:
            raise ValueError("contrast width must equal K")
        object.__setattr__(self, "contrast", _freeze(lam))

    @property
    def k(self) -> int:
        return self.contrast.shape[0]

    def with_contrast(self, contrast: np.ndarray) -> "RegressionSpec":
        return replace(self, contrast=contrast)


def regressor_tensor(spec: RegressionSpec, pop: Population, ts: TreatmentSet) -> np.ndarray:
    """Materialize ``z_t(x_i, w)`` for every unit, value and period.

    Returns
    -------
    ndarray, shape (n, J+1, T, K)
        Entries at unobserved ``(i, t)`` pairs are still evaluated (the
        transform is defined for all periods); consumers apply the
        observation mask.
    """
    if spec.batch is not None:
        Z = np.asarray(spec.batch(pop, ts.values), dtype=float)
        expected = (pop.n, ts.num_values, ts.T, spec.K)
        if Z.shape != expected:
            raise ValueError(f"batch evaluator returned {Z.shape}, expected {expected}")
        return Z
    Z = np.empty((pop.n, ts.num_values, ts.T, spec.K))
    for i in range(pop.n):
        for j in range(ts.num_values):
            w = ts.values[j]
            for t in range(ts.T):
                Z[i, j, t] = spec.transform(i, t, w)
    return Z


# ----------------------------------------------------------------------
# Validation
# ----------------------------------------------------------------------

@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, msg: str) -> None:
        self.violations.append(msg)


def validate_population(pop: Population, ts: TreatmentSet) -> ValidationReport:
    """Check a population against a treatment set; report-only, never raises."""
    report = ValidationReport()
    if pop.T != ts.T:
        report.add(
            f"population has {pop.T} periods but treatment set has {ts.T}"
        )
    bad = (pop.observed_treatment < 0) | (pop.observed_treatment >= ts.num_values)
    for i in np.nonzero(bad)[0]:
        report.add(f"unit {i}: treatment index out of range")
    if not np.all(np.isfinite(pop.covariates)):
        report.add("covariates contain non-finite values")
    # Outcomes must be finite exactly where observed.
    vals = pop.observed_outcomes[pop.observed_periods]
    if not np.all(np.isfinite(vals)):
        report.add("outcome outside observed period or non-finite where observed")
    if np.any(~pop.observed_periods.any(axis=1)):
        empty = np.nonzero(~pop.observed_periods.any(axis=1))[0]
        report.add(f"units with no observed periods: {list(map(int, empty[:10]))}")
    return report


def check_outcome_support(
    outcomes: np.ndarray, mask: np.ndarray, report: ValidationReport
) -> None:
    """Flag outcomes supplied at unobserved periods (pre-construction check)."""
    outside = np.asarray(outcomes)[~np.asarray(mask, dtype=bool)]
    if np.any(outside != 0.0) and np.any(np.isfinite(outside) & (outside != 0.0)):
        report.add("outcome outside observed period")


# ----------------------------------------------------------------------
# Templates
# ----------------------------------------------------------------------

def _select_columns(pop: Population, cols: Sequence[int | str] | None) -> np.ndarray:
    if cols is None:
        return np.arange(pop.d)
    out = []
    for c in cols:
        if isinstance(c, str):
            if pop.covariate_names is None or c not in pop.covariate_names:
                raise KeyError(f"unknown covariate column {c!r}")
            out.append(pop.covariate_names.index(c))
        else:
            if not 0 <= int(c) < pop.d:
                raise KeyError(f"covariate column {c} out of range")
            out.append(int(c))
    return np.asarray(out, dtype=int)


def _warn_if_collinear(x: np.ndarray, warnings: list[str]) -> None:
    if x.size == 0:
        return
    s = np.linalg.svd(x, compute_uv=False)
    if s[-1] <= 1e-10 * max(s[0], 1.0):
        warnings.append("covariate matrix is numerically collinear")


def build_template(
    name: str,
    options: Mapping[str, object] | None,
    pop: Population,
    ts: TreatmentSet | None = None,
    design: Design | None = None,
) -> RegressionSpec:
    """Construct a catalog regression specification.

    Parameters
    ----------
    name : str
        One of ``angrist``, ``multivalued``, ``saturated_interacted``,
        ``interacted_t``, ``kline``, ``twfe``, ``owfe``, ``event_study``,
        ``custom``.
    options : mapping
        Template options.  Common keys: ``covariates`` (column indices or
        names; default all).  ``interacted_t`` takes ``t`` (the centering
        parameter) or ``centering="mean"``; ``event_study`` takes ``path_map``
        (callable ``w -> (T, m)`` array of treatment-history regressors).
    design : Design, optional
        True design, required by centerings that depend on assignment
        probabilities (``kline``, ``interacted_t`` with fractional ``t``)
        in population mode; when absent, observed-treatment plug-ins are
        used (e.g. the treated sample mean of the covariates).

    Notes
    -----
    Returned specs carry vectorized batch evaluators; the scalar
    ``transform`` is the reference implementation and the two are checked
    against each other in the test suite.
    """
    opts = dict(options or {})
    warnings: list[str] = []
    if ts is None:
        ts = TreatmentSet.binary()

    def pop_option(key, default=None):
        return opts.pop(key, default)

    builder = _TEMPLATES.get(name)
    if builder is None:
        raise KeyError(f"unknown template {name!r}")
    spec = builder(pop, ts, design, pop_option, warnings)
    if opts:
        raise KeyError(f"unrecognized template options: {sorted(opts)}")
    for msg in warnings:
        _warnings.warn(f"{name}: {msg}", UserWarning, stacklevel=2)
    return spec


def _weighted_mean(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    tot = w.sum()
    if tot == 0:
        raise ValueError("weights sum to zero")
    return (w[:, None] * x).sum(axis=0) / tot


def _treated_probs(pop: Population, ts: TreatmentSet, design: Design | None) -> np.ndarray:
    """pi_i(1) for binary sets: from the design when given, else observed W."""
    if design is not None:
        return design.probs[:, 1]
    return (pop.observed_treatment == 1).astype(float)


def _binary_scalar_w(ts: TreatmentSet) -> None:
    if ts.T != 1 or ts.num_values != 2 or not np.allclose(ts.values, [[0.0], [1.0]]):
        raise ValueError("this template requires the binary cross-sectional treatment set")


def _template_angrist(pop, ts, design, opt, warnings):
    _binary_scalar_w(ts)
    cols = _select_columns(pop, opt("covariates"))
    x = pop.covariates[:, cols]
    xt = np.column_stack([np.ones(pop.n), x])
    _warn_if_collinear(xt, warnings)
    K = 1 + xt.shape[1]

    def transform(i, t, w):
        return np.concatenate([[w[0]], xt[i]])

    def batch(p, values):
        Z = np.empty((p.n, values.shape[0], 1, K))
        for j, w in enumerate(values):
            Z[:, j, 0, 0] = w[0]
            Z[:, j, 0, 1:] = xt
        return Z

    lam = np.zeros((1, K))
    lam[0, 0] = 1.0
    return RegressionSpec(transform, K, lam, template_tag="angrist", batch=batch)


def _template_multivalued(pop, ts, design, opt, warnings):
    if ts.T != 1:
        raise ValueError("multivalued template is cross-sectional")
    J = ts.J
    cols = _select_columns(pop, opt("covariates"))
    x = pop.covariates[:, cols]
    xt = np.column_stack([np.ones(pop.n), x])
    _warn_if_collinear(xt, warnings)
    K = J + xt.shape[1]
    values = ts.values

    def transform(i, t, w):
        dummies = (values[1:, 0] == w[0]).astype(float)
        return np.concatenate([dummies, xt[i]])

    def batch(p, vals):
        Z = np.empty((p.n, vals.shape[0], 1, K))
        for j, w in enumerate(vals):
            Z[:, j, 0, :J] = (vals[1:, 0] == w[0]).astype(float)
            Z[:, j, 0, J:] = xt
        return Z

    lam = np.zeros((J, K))
    lam[:, :J] = np.eye(J)
    return RegressionSpec(transform, K, lam, template_tag="multivalued", batch=batch)


def _saturated_dummies(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dummy-encode distinct rows of x, dropping the first level.

    Returns (dummies (n, L), level codes (n,)).
    """
    _, codes = np.unique(x, axis=0, return_inverse=True)
    L = codes.max() + 1
    D = np.zeros((x.shape[0], L - 1))
    for lev in range(1, L):
        D[:, lev - 1] = codes == lev
    return D, codes


def _template_saturated_interacted(pop, ts, design, opt, warnings):
    _binary_scalar_w(ts)
    cols = _select_columns(pop, opt("covariates"))
    D, _ = _saturated_dummies(pop.covariates[:, cols])
    Dbar = D.mean(axis=0)
    L = D.shape[1]
    K = 1 + L + 1 + L

    def transform(i, t, w):
        return np.concatenate([[1.0], D[i], [w[0]], w[0] * (D[i] - Dbar)])

    def batch(p, values):
        Z = np.empty((p.n, values.shape[0], 1, K))
        for j, w in enumerate(values):
            Z[:, j, 0, 0] = 1.0
            Z[:, j, 0, 1 : 1 + L] = D
            Z[:, j, 0, 1 + L] = w[0]
            Z[:, j, 0, 2 + L :] = w[0] * (D - Dbar)
        return Z

    lam = np.zeros((1, K))
    lam[0, 1 + L] = 1.0
    return RegressionSpec(
        transform, K, lam, template_tag="saturated_interacted", batch=batch
    )


def _template_kline(pop, ts, design, opt, warnings):
    _binary_scalar_w(ts)
    cols = _select_columns(pop, opt("covariates"))
    x = pop.covariates[:, cols]
    pi1 = _treated_probs(pop, ts, design)
    xbar1 = _weighted_mean(x, pi1)  # treated-centered interaction
    d = x.shape[1]
    K = 1 + d + 1 + d

    def transform(i, t, w):
        return np.concatenate([[1.0], x[i], [w[0]], w[0] * (x[i] - xbar1)])

    def batch(p, values):
        Z = np.empty((p.n, values.shape[0], 1, K))
        for j, w in enumerate(values):
            Z[:, j, 0, 0] = 1.0
            Z[:, j, 0, 1 : 1 + d] = x
            Z[:, j, 0, 1 + d] = w[0]
            Z[:, j, 0, 2 + d :] = w[0] * (x - xbar1)
        return Z

    lam = np.zeros((1, K))
    lam[0, 1 + d] = 1.0
    return RegressionSpec(transform, K, lam, template_tag="kline", batch=batch)


def _template_interacted_t(pop, ts, design, opt, warnings):
    """Fully interacted regression with a treatment-centered contrast.

    The regressors are the raw interaction form ``[1, w, x, w*x]``; the
    centering enters only through the contrast row ``tau + c' gamma_2``,
    where ``c`` is the centering point.  ``t`` interpolates between the
    untreated mean (``t=0``) and the treated mean (``t=1``);
    ``centering="mean"`` uses the overall covariate mean.
    """
    _binary_scalar_w(ts)
    cols = _select_columns(pop, opt("covariates"))
    x = pop.covariates[:, cols]
    d = x.shape[1]
    centering = opt("centering", None)
    t_par = opt("t", None)
    if centering == "mean":
        center = x.mean(axis=0)
    elif centering is not None:
        center = np.asarray(centering, dtype=float)
    else:
        if t_par is None:
            raise KeyError("interacted_t needs either 't' or 'centering'")
        pi1 = _treated_probs(pop, ts, design)
        xbar1 = _weighted_mean(x, pi1)
        xbar0 = _weighted_mean(x, 1.0 - pi1)
        center = float(t_par) * xbar1 + (1.0 - float(t_par)) * xbar0
    K = 1 + 1 + d + d

    def transform(i, t, w):
        return np.concatenate([[1.0, w[0]], x[i], w[0] * x[i]])

    def batch(p, values):
        Z = np.empty((p.n, values.shape[0], 1, K))
        for j, w in enumerate(values):
            Z[:, j, 0, 0] = 1.0
            Z[:, j, 0, 1] = w[0]
            Z[:, j, 0, 2 : 2 + d] = x
            Z[:, j, 0, 2 + d :] = w[0] * x
        return Z

    lam = np.zeros((1, K))
    lam[0, 1] = 1.0
    lam[0, 2 + d :] = center
    return RegressionSpec(transform, K, lam, template_tag="interacted_t", batch=batch)


def _within_demean(values: np.ndarray, mask_row: np.ndarray) -> np.ndarray:
    """Demean a (T, m) block over the observed periods of one unit."""
    L = mask_row.sum()
    out = np.where(mask_row[:, None], values, 0.0)
    if L:
        out = out - mask_row[:, None] * (out.sum(axis=0, keepdims=True) / L)
    return out


def _panel_fe_blocks(pop: Population, ts: TreatmentSet, include_time: bool):
    """Within-demeaned time dummies (periods 1..T-1) per unit."""
    T = ts.T
    mask = pop.observed_periods
    if include_time:
        dummies = np.zeros((T, T - 1))
        dummies[1:, :] = np.eye(T - 1)
        blocks = np.stack([_within_demean(dummies, mask[i]) for i in range(pop.n)])
    else:
        blocks = np.zeros((pop.n, T, 0))
    return blocks  # (n, T, T-1 or 0)


def _template_panel(pop, ts, design, opt, warnings, *, include_time: bool, path_map=None):
    T = ts.T
    mask = pop.observed_periods
    fe = _panel_fe_blocks(pop, ts, include_time)
    m_fe = fe.shape[2]

    if path_map is None:
        def path_map(w):  # plain treatment indicator
            return np.asarray(w, dtype=float)[:, None]

    m_w = np.asarray(path_map(ts.values[0])).shape[1]
    K = m_fe + m_w

    # Per-value treatment block, within-demeaned per unit's observed periods.
    f_vals = np.stack([np.asarray(path_map(w), dtype=float) for w in ts.values])

    def transform(i, t, w):
        j = np.nonzero((ts.values == np.asarray(w)).all(axis=1))[0][0]
        fw = _within_demean(f_vals[j], mask[i])
        return np.concatenate([fe[i, t], fw[t]])

    def batch(p, values):
        Z = np.empty((p.n, values.shape[0], T, K))
        L = mask.sum(axis=1).astype(float)  # (n,)
        for j in range(values.shape[0]):
            fw = f_vals[j]  # (T, m_w)
            masked = mask[:, :, None] * fw[None, :, :]
            means = masked.sum(axis=1, keepdims=True) / L[:, None, None]
            dotw = np.where(mask[:, :, None], fw[None, :, :] - means, 0.0)
            Z[:, j, :, :m_fe] = fe
            Z[:, j, :, m_fe:] = dotw
        return Z

    lam_rows = opt("contrast_rows", None)
    if lam_rows is None:
        lam = np.zeros((m_w, K))
        lam[:, m_fe:] = np.eye(m_w)
    else:
        lam = np.asarray(lam_rows, dtype=float)
    return RegressionSpec(
        transform,
        K,
        lam,
        within_demeaned=True,
        template_tag="twfe" if include_time else "owfe",
        batch=batch,
    )


def _template_twfe(pop, ts, design, opt, warnings):
    return _template_panel(pop, ts, design, opt, warnings, include_time=True)


def _template_owfe(pop, ts, design, opt, warnings):
    return _template_panel(pop, ts, design, opt, warnings, include_time=False)


def _template_event_study(pop, ts, design, opt, warnings):
    path_map = opt("path_map", None)
    if path_map is None:
        event_times = opt("event_times", None)
        if event_times is None:
            raise KeyError("event_study needs 'path_map' or 'event_times'")
        event_times = [int(e) for e in event_times]
        T = ts.T

        def path_map(w):
            w = np.asarray(w)
            if w.max() <= 0:  # never treated: all event dummies zero
                return np.zeros((T, len(event_times)))
            adopt = int(np.argmax(w > 0))
            rel = np.arange(T) - adopt
            return np.column_stack([(rel == e).astype(float) for e in event_times])

    spec = _template_panel(
        pop, ts, design, opt, warnings, include_time=True, path_map=path_map
    )
    return replace(spec, template_tag="event_study")


def _template_custom(pop, ts, design, opt, warnings):
    transform = opt("transform")
    K = opt("K")
    contrast = opt("contrast")
    if transform is None or K is None or contrast is None:
        raise KeyError("custom template needs 'transform', 'K' and 'contrast'")
    return RegressionSpec(
        transform,
        int(K),
        np.asarray(contrast, dtype=float),
        within_demeaned=bool(opt("within_demeaned", False)),
        template_tag="custom",
        batch=opt("batch", None),
    )


_TEMPLATES = {
    "angrist": _template_angrist,
    "multivalued": _template_multivalued,
    "saturated_interacted": _template_saturated_interacted,
    "interacted_t": _template_interacted_t,
    "kline": _template_kline,
    "twfe": _template_twfe,
    "owfe": _template_owfe,
    "event_study": _template_event_study,
    "custom": _template_custom,
}


# ----------------------------------------------------------------------
# Ingestion
# ----------------------------------------------------------------------

class DataFormatError(ValueError):
    """Raised when an input CSV violates the expected dialect or layout."""


def panel_covariates(pop: Population, base_names: Sequence[str], T: int) -> np.ndarray:
    """Collect wide columns ``name@t`` into an (n, T, K) panel array."""
    if pop.covariate_names is None:
        raise ValueError("population has no covariate names")
    out = np.empty((pop.n, T, len(base_names)))
    for kk, base in enumerate(base_names):
        for t in range(T):
            col = f"{base}@{t}"
            if col not in pop.covariate_names:
                raise KeyError(f"missing wide covariate column {col!r}")
            out[:, t, kk] = pop.covariates[:, pop.covariate_names.index(col)]
    return out


def load_long_csv(
    path_or_text: str,
    treatment_values: np.ndarray | None = None,
) -> tuple[Population, TreatmentSet]:
    """Ingest a long-format CSV into a population and treatment set.

    Required columns: ``unit``, ``outcome``, ``treatment``; optional
    ``period`` (defaults to a single period).  All remaining columns are
    covariates.  For panels, the per-period ``treatment`` entries of a unit
    form its treatment path; the treatment set is the sorted collection of
    distinct observed paths unless ``treatment_values`` is supplied.
    Covariates that vary within unit are stored wide as ``name@t`` columns.

    The dialect is strict: comma separators, a header row, UTF-8 and ``.``
    decimals; anything else raises :class:`DataFormatError`.
    """
    if "\n" in path_or_text:
        text = path_or_text
    else:
        with open(path_or_text, "r", encoding="utf-8", newline="") as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise DataFormatError("missing header row")
    fields = [f.strip() for f in reader.fieldnames]
    for required in ("unit", "outcome", "treatment"):
        if required not in fields:
            raise DataFormatError(f"missing required column {required!r}")
    has_period = "period" in fields
    cov_cols = [f for f in fields if f not in ("unit", "period", "outcome", "treatment")]

    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if None in rec or any(v is None for v in rec.values()):
            raise DataFormatError(f"line {lineno}: ragged row")
        try:
            rows.append(
                (
                    rec["unit"].strip(),
                    rec["period"].strip() if has_period else "0",
                    float(rec["outcome"]),
                    float(rec["treatment"]),
                    [float(rec[c]) for c in cov_cols],
                )
            )
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from None
    if not rows:
        raise DataFormatError("no data rows")

    units = sorted({r[0] for r in rows})
    periods = sorted({r[1] for r in rows})
    uidx = {u: i for i, u in enumerate(units)}
    pidx = {p: t for t, p in enumerate(periods)}
    n, T = len(units), len(periods)

    outcomes = np.zeros((n, T))
    mask = np.zeros((n, T), dtype=bool)
    w_path = np.full((n, T), np.nan)
    cov_panel = np.full((n, T, len(cov_cols)), np.nan)
    for unit, period, y, w, covs in rows:
        i, t = uidx[unit], pidx[period]
        if mask[i, t]:
            raise DataFormatError(f"duplicate observation for unit {unit}, period {period}")
        mask[i, t] = True
        outcomes[i, t] = y
        w_path[i, t] = w
        cov_panel[i, t] = covs

    # Treatment paths: unobserved periods of a unit take the value 0.
    w_filled = np.where(mask, w_path, 0.0)
    if treatment_values is None:
        distinct = np.unique(w_filled, axis=0)
        order = np.lexsort(distinct.T[::-1])
        values = distinct[order]
    else:
        values = np.atleast_2d(np.asarray(treatment_values, dtype=float))
    ts = TreatmentSet(values)
    w_idx = np.empty(n, dtype=int)
    for i in range(n):
        match = np.nonzero((ts.values == w_filled[i]).all(axis=1))[0]
        if match.size == 0:
            raise DataFormatError(f"unit {units[i]}: treatment path not in treatment set")
        w_idx[i] = match[0]

    # Static covariates stay one column; time-varying ones go wide.
    names: list[str] = []
    cols: list[np.ndarray] = []
    for kk, name in enumerate(cov_cols):
        vals = cov_panel[:, :, kk]
        observed = [vals[i, mask[i]] for i in range(n)]
        static = all(np.ptp(v) == 0 for v in observed if v.size)
        if static:
            names.append(name)
            cols.append(np.array([v[0] if v.size else np.nan for v in observed]))
        else:
            for t in range(T):
                names.append(f"{name}@{t}")
                cols.append(np.where(mask[:, t], vals[:, t], 0.0))
    covariates = np.column_stack(cols) if cols else np.empty((n, 0))

    pop = Population(
        covariates=covariates,
        observed_treatment=w_idx,
        observed_outcomes=outcomes,
        observed_periods=mask,
        unit_ids=tuple(units),
        period_ids=tuple(periods),
        covariate_names=tuple(names),
    )
    return pop, ts
