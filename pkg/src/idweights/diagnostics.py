"""Design checklists: calibration, predictiveness, balance, and profiles.

All checks here treat the design as the object under audit: is it inside
[0, 1], does it track realized treatment within bins, does it predict
treatment at all, and does inverse-propensity reweighting by it balance the
covariates.  Outcome profiles slice mean outcomes by design bins together
with the estimand weight each bin carries.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .model import Design, Population

__all__ = [
    "CalibrationBin",
    "BalanceStat",
    "ProfileBin",
    "ResetTest",
    "DiagnosticsReport",
    "run_design_checklist",
    "outcome_by_design_profile",
    "calibration_csv",
    "profiles_csv",
]

DEFAULT_BINS = 7
_EDGE_TOL = 1e-12


@dataclass
class CalibrationBin:
    lower: float
    upper: float
    mean_design: float
    treated_share: float
    count: int
    label: str = "interior"

    def to_json_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "mean_design": self.mean_design,
            "treated_share": self.treated_share,
            "count": self.count,
            "label": self.label,
        }


@dataclass
class BalanceStat:
    name: str
    value: float
    sd: float
    skipped: int

    def to_json_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "sd": self.sd, "skipped": self.skipped}


@dataclass
class ProfileBin:
    label: str
    lower: float
    upper: float
    count: int
    mean_treated: float | None
    mean_control: float | None
    weight_mass: float

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "lower": self.lower,
            "upper": self.upper,
            "count": self.count,
            "mean_treated": self.mean_treated,
            "mean_control": self.mean_control,
            "weight_mass": self.weight_mass,
        }


@dataclass
class ResetTest:
    """Joint test that higher powers of the design add nothing linear.

    Auxiliary regression of W on (1, pi, pi^2, ..., pi^p) with a joint Wald
    statistic on the coefficients of the powers above one, referred to a
    chi-squared distribution.
    """

    statistic: float | None
    df: int
    p_value: float | None
    coefficients: np.ndarray | None

    def to_json_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "coefficients": None if self.coefficients is None else self.coefficients.tolist(),
        }


@dataclass
class DiagnosticsReport:
    oob_share: float
    design_variance: float
    calibration: list[CalibrationBin]
    r_squared: float
    within_r_squared: float | None
    balance: list[BalanceStat]
    profiles: list[ProfileBin]
    reset: ResetTest | None
    feature_correlations: dict[str, float]
    notes: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "oob_share": self.oob_share,
            "design_variance": self.design_variance,
            "calibration": [b.to_json_dict() for b in self.calibration],
            "r_squared": self.r_squared,
            "within_r_squared": self.within_r_squared,
            "balance": [b.to_json_dict() for b in self.balance],
            "profiles": [b.to_json_dict() for b in self.profiles],
            "reset": None if self.reset is None else self.reset.to_json_dict(),
            "feature_correlations": self.feature_correlations,
            "notes": self.notes,
        }


def _binary_pi(design: Design, pop: Population) -> tuple[np.ndarray, np.ndarray]:
    if design.probs.shape != (pop.n, 2):
        raise ValueError("checklist requires a binary cross-sectional design")
    pi = design.probs[:, 1]
    w = (pop.observed_treatment == 1).astype(float)
    return pi, w


def _covariate_names(pop: Population) -> tuple[str, ...]:
    if pop.covariate_names is not None:
        return pop.covariate_names
    return tuple(f"x{j}" for j in range(pop.covariates.shape[1]))


def _quantile_partition(
    values: np.ndarray, bins: int, notes: list[str]
) -> tuple[np.ndarray, np.ndarray]:
    """Quantile bin edges and per-value bin assignment (deterministic).

    Duplicate quantile edges (heavy ties) or fewer distinct values than
    requested bins reduce the bin count, with a note.
    """
    distinct = np.unique(values)
    k = min(bins, distinct.size)
    if k < bins:
        notes.append(f"reduced bins from {bins} to {k}: fewer distinct design values")
    if k <= 1:
        lo = float(values.min(initial=0.0))
        hi = float(values.max(initial=1.0))
        return np.array([lo, hi]), np.zeros(values.size, dtype=int)
    edges = np.quantile(values, np.linspace(0.0, 1.0, k + 1))
    edges = np.unique(edges)
    if edges.size - 1 < k:
        notes.append(f"collapsed empty bins: {k - (edges.size - 1)} duplicate quantile edges")
    assignment = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, edges.size - 2)
    return edges, assignment


def run_design_checklist(
    design: Design,
    pop: Population,
    bins: int = DEFAULT_BINS,
    balance_functions: dict[str, np.ndarray] | None = None,
    absorb: np.ndarray | None = None,
    unit_weights: np.ndarray | None = None,
    reset_powers: int = 3,
) -> DiagnosticsReport:
    """Audit a binary design against the observed treatments.

    Parameters
    ----------
    balance_functions : mapping name -> per-unit values, optional
        Covariate transforms to balance-check; defaults to every covariate
        column.
    absorb : array of group labels, optional
        Factor to absorb before the predictiveness R-squared (reported as a
        within R-squared alongside the raw one).
    unit_weights : array, optional
        Per-unit estimand weights for the profile masses; defaults to 1.
    """
    notes: list[str] = []
    pi, w = _binary_pi(design, pop)
    n = pop.n

    low = pi < -_EDGE_TOL
    high = pi > 1.0 + _EDGE_TOL
    oob_share = float((low | high).mean())
    design_variance = float(pi.var())

    # Calibration binscatter: quantile bins over in-range units, plus
    # dedicated bins for out-of-range units so the counts cover everyone.
    interior = ~(low | high)
    calibration: list[CalibrationBin] = []
    if low.any():
        calibration.append(
            CalibrationBin(
                lower=float(pi[low].min()),
                upper=0.0,
                mean_design=float(pi[low].mean()),
                treated_share=float(w[low].mean()),
                count=int(low.sum()),
                label="below_zero",
            )
        )
    if interior.any():
        edges, assignment = _quantile_partition(pi[interior], bins, notes)
        w_int = w[interior]
        pi_int = pi[interior]
        for b in range(edges.size - 1):
            members = assignment == b
            if not members.any():
                notes.append(f"calibration bin {b} empty after assignment; dropped")
                continue
            calibration.append(
                CalibrationBin(
                    lower=float(edges[b]),
                    upper=float(edges[b + 1]),
                    mean_design=float(pi_int[members].mean()),
                    treated_share=float(w_int[members].mean()),
                    count=int(members.sum()),
                )
            )
    if high.any():
        calibration.append(
            CalibrationBin(
                lower=1.0,
                upper=float(pi[high].max()),
                mean_design=float(pi[high].mean()),
                treated_share=float(w[high].mean()),
                count=int(high.sum()),
                label="above_one",
            )
        )

    r_squared = _r_squared(w, pi)
    within_r_squared = None
    if absorb is not None:
        within_r_squared = _r_squared(
            _demean_within(w, absorb), _demean_within(pi, absorb)
        )

    if balance_functions is None:
        balance_functions = {
            name: pop.covariates[:, j] for j, name in enumerate(_covariate_names(pop))
        }
    degenerate = (np.abs(pi) <= _EDGE_TOL) | (np.abs(pi - 1.0) <= _EDGE_TOL)
    usable = ~degenerate
    skipped = int(degenerate.sum())
    balance: list[BalanceStat] = []
    for name, f in balance_functions.items():
        f = np.asarray(f, dtype=float)
        if usable.any():
            terms = (
                w[usable] / pi[usable] - (1.0 - w[usable]) / (1.0 - pi[usable])
            ) * f[usable]
            value = float(terms.sum() / n)
            m = terms.size
            sd = float(np.sqrt(m) * terms.std(ddof=1) / n) if m > 1 else 0.0
        else:
            value, sd = 0.0, 0.0
        balance.append(BalanceStat(name=name, value=value, sd=sd, skipped=skipped))

    reset = _reset_test(w, pi, reset_powers)

    feature_correlations = {}
    for j, name in enumerate(_covariate_names(pop)):
        col = pop.covariates[:, j]
        if col.std() < 1e-300 or pi.std() < 1e-300:
            feature_correlations[name] = 0.0
        else:
            feature_correlations[name] = float(np.corrcoef(col, pi)[0, 1])

    profiles, profile_notes = _profile_bins(design, pop, bins, unit_weights)
    notes.extend(profile_notes)

    report = DiagnosticsReport(
        oob_share=oob_share,
        design_variance=design_variance,
        calibration=calibration,
        r_squared=r_squared,
        within_r_squared=within_r_squared,
        balance=balance,
        profiles=profiles,
        reset=reset,
        feature_correlations=feature_correlations,
        notes=notes,
    )
    assert sum(b.count for b in report.calibration) == n
    return report


def _demean_within(v: np.ndarray, groups: np.ndarray) -> np.ndarray:
    out = v.astype(float).copy()
    for g in np.unique(groups):
        members = groups == g
        out[members] -= out[members].mean()
    return out


def _r_squared(y: np.ndarray, x: np.ndarray) -> float:
    sst = float(((y - y.mean()) ** 2).sum())
    if sst <= 0.0:
        return 0.0
    if x.std() < 1e-300:
        return 0.0
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    ssr = float(((y - X @ coef) ** 2).sum())
    return max(0.0, 1.0 - ssr / sst)


def _reset_test(w: np.ndarray, pi: np.ndarray, powers: int) -> ResetTest:
    n = w.size
    X = np.column_stack([np.ones(n)] + [pi**p for p in range(1, powers + 1)])
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        return ResetTest(statistic=None, df=0, p_value=None, coefficients=None)
    XtX = X.T @ X
    coef = np.linalg.solve(XtX, X.T @ w)
    resid = w - X @ coef
    dof = n - X.shape[1]
    if dof <= 0:
        return ResetTest(statistic=None, df=0, p_value=None, coefficients=coef)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(XtX)
    sel = np.arange(2, X.shape[1])  # powers above one
    b = coef[sel]
    V = cov[np.ix_(sel, sel)]
    try:
        stat = float(b @ np.linalg.solve(V, b))
    except np.linalg.LinAlgError:
        return ResetTest(statistic=None, df=sel.size, p_value=None, coefficients=coef)
    p = float(stats.chi2.sf(stat, df=sel.size))
    return ResetTest(statistic=stat, df=int(sel.size), p_value=p, coefficients=coef)


def _profile_bins(
    design: Design,
    pop: Population,
    quantile_bins: int,
    unit_weights: np.ndarray | None,
) -> tuple[list[ProfileBin], list[str]]:
    notes: list[str] = []
    pi, w = _binary_pi(design, pop)
    y = pop.observed_outcomes[:, 0]
    omega = np.ones(pop.n) if unit_weights is None else np.asarray(unit_weights, dtype=float)
    n = pop.n

    low = pi < 0.0
    high = pi > 1.0
    interior = ~(low | high)

    def make_bin(members: np.ndarray, label: str, lo: float, hi: float) -> ProfileBin:
        treated = members & (w == 1.0)
        control = members & (w == 0.0)
        return ProfileBin(
            label=label,
            lower=lo,
            upper=hi,
            count=int(members.sum()),
            mean_treated=float(y[treated].mean()) if treated.any() else None,
            mean_control=float(y[control].mean()) if control.any() else None,
            weight_mass=float(omega[members].sum() / n),
        )

    out: list[ProfileBin] = []
    if low.any():
        out.append(make_bin(low, "below_zero", float(pi[low].min()), 0.0))
    if interior.any():
        edges, assignment = _quantile_partition(pi[interior], quantile_bins, notes)
        idx = np.nonzero(interior)[0]
        for b in range(edges.size - 1):
            members = np.zeros(n, dtype=bool)
            members[idx[assignment == b]] = True
            if not members.any():
                continue
            out.append(make_bin(members, f"bin_{b}", float(edges[b]), float(edges[b + 1])))
    if high.any():
        out.append(make_bin(high, "above_one", 1.0, float(pi[high].max())))
    return out, notes


def outcome_by_design_profile(
    design: Design,
    pop: Population,
    quantile_bins: int = DEFAULT_BINS,
    unit_weights: np.ndarray | None = None,
) -> list[ProfileBin]:
    """Mean outcomes by treatment arm across design quantile bins.

    Out-of-range design values get their own bins below 0 and above 1; an
    arm that is absent from a bin is recorded as absent rather than
    imputed.  ``unit_weights`` (for instance the estimand's per-unit effect
    weights) give each bin's total weight mass.
    """
    bins, _ = _profile_bins(design, pop, quantile_bins, unit_weights)
    return bins


def calibration_csv(report: DiagnosticsReport) -> str:
    buf = io.StringIO()
    buf.write("label,lower,upper,mean_design,treated_share,count\n")
    for b in report.calibration:
        buf.write(
            f"{b.label},{b.lower:.17g},{b.upper:.17g},"
            f"{b.mean_design:.17g},{b.treated_share:.17g},{b.count}\n"
        )
    return buf.getvalue()


def profiles_csv(report_or_bins) -> str:
    bins = (
        report_or_bins.profiles
        if isinstance(report_or_bins, DiagnosticsReport)
        else report_or_bins
    )
    buf = io.StringIO()
    buf.write("label,lower,upper,count,mean_treated,mean_control,weight_mass\n")
    for b in bins:
        mt = "" if b.mean_treated is None else f"{b.mean_treated:.17g}"
        mc = "" if b.mean_control is None else f"{b.mean_control:.17g}"
        buf.write(
            f"{b.label},{b.lower:.17g},{b.upper:.17g},{b.count},{mt},{mc},"
            f"{b.weight_mass:.17g}\n"
        )
    return buf.getvalue()
