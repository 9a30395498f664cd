"""Estimators that hold the design fixed: IPW, trimming, and patching.

Once a design is on the table, alternative estimates follow by inverse
propensity weighting with user-chosen effect weights, by trimming extreme
probabilities, or by *patching*: recalibrating the design to empirical
treated frequencies within histogram bins before weighting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Design, Population

__all__ = [
    "IpwResult",
    "TrimmedResult",
    "PatchBin",
    "PatchedDesign",
    "DivisionGuardError",
    "ipw_estimate",
    "trimmed_ate",
    "patch_design",
    "patched_estimate",
]


class DivisionGuardError(ValueError):
    """Nonzero weight sits on a unit whose assignment probability is ~0."""

    def __init__(self, units: list[int], eps: float):
        self.units = units
        super().__init__(
            f"{len(units)} unit(s) carry weight but have assignment probability "
            f"<= {eps:g} at the observed treatment: {units[:10]}"
        )


@dataclass
class IpwResult:
    estimate: np.ndarray  # (k,)
    effective_n: float
    used: int

    def to_json_dict(self) -> dict:
        return {
            "estimate": self.estimate.tolist(),
            "effective_n": self.effective_n,
            "used": self.used,
        }


def _expand_weights(user_weights: np.ndarray, n: int, num_arms: int, T: int) -> np.ndarray:
    """Normalize user weight input to shape (n, num_arms, k, T)."""
    omega = np.asarray(user_weights, dtype=float)
    if omega.ndim == 2 and omega.shape == (n, num_arms):
        omega = omega[:, :, None, None]
    elif omega.ndim == 3 and omega.shape[:2] == (n, num_arms):
        omega = omega[:, :, :, None] if T == 1 else omega[:, :, None, :]
    if omega.ndim != 4 or omega.shape[0] != n or omega.shape[1] != num_arms:
        raise ValueError(
            f"user weights must broadcast to (n, arms, k, T); got {omega.shape}"
        )
    if omega.shape[3] != T:
        raise ValueError("user weights disagree with the number of periods")
    return omega


def ipw_estimate(
    design: Design,
    pop: Population,
    user_weights: np.ndarray,
    eps: float = 1e-8,
) -> IpwResult:
    """Inverse-propensity estimate with caller-supplied effect weights.

        tau_hat = (1/n) sum_i omega_i(W_i) y_i / pi_i(W_i),

    summing the weighted observed outcomes over periods.  Units whose
    observed-arm probability is below ``eps`` while carrying nonzero weight
    are an error (listed), since their contribution is unbounded.
    """
    n = pop.n
    num_arms = design.probs.shape[1]
    T = pop.observed_outcomes.shape[1]
    omega = _expand_weights(user_weights, n, num_arms, T)
    rows = np.arange(n)
    W = pop.observed_treatment
    pi_obs = design.probs[rows, W]
    omega_obs = omega[rows, W]  # (n, k, T)
    active = np.abs(omega_obs).max(axis=(1, 2)) > 0.0
    offenders = np.nonzero(active & (pi_obs <= eps))[0]
    if offenders.size:
        raise DivisionGuardError([int(u) for u in offenders], eps)
    y = np.where(pop.observed_periods, pop.observed_outcomes, 0.0)
    safe_pi = np.where(active, pi_obs, 1.0)
    contrib = omega_obs * y[:, None, :] / safe_pi[:, None, None]
    estimate = contrib.sum(axis=(0, 2)) / n
    v = (np.abs(omega_obs).sum(axis=(1, 2)) / safe_pi) * active
    denom = float((v**2).sum())
    effective_n = float(v.sum()) ** 2 / denom if denom > 0 else 0.0
    return IpwResult(estimate=estimate, effective_n=effective_n, used=int(active.sum()))


@dataclass
class TrimmedResult:
    estimate: float
    kept: int
    trimmed: int

    def to_json_dict(self) -> dict:
        return {"estimate": self.estimate, "kept": self.kept, "trimmed": self.trimmed}


def trimmed_ate(design: Design, pop: Population, eps: float = 0.02) -> TrimmedResult:
    """ATE over the subpopulation with eps < pi < 1 - eps.

    Weights are the normalized indicator of surviving the trim, so the
    estimate is the IPW contrast averaged over kept units.
    """
    if design.probs.shape[1] != 2:
        raise ValueError("trimmed ATE requires a binary design")
    pi = design.probs[:, 1]
    keep = (pi > eps) & (pi < 1.0 - eps)
    kept = int(keep.sum())
    if kept == 0:
        raise ValueError("all units trimmed: no observations with interior probabilities")
    w = (pop.observed_treatment == 1).astype(float)
    y = pop.observed_outcomes[:, 0]
    terms = w[keep] * y[keep] / pi[keep] - (1.0 - w[keep]) * y[keep] / (1.0 - pi[keep])
    return TrimmedResult(estimate=float(terms.mean()), kept=kept, trimmed=pop.n - kept)


# ---------------------------------------------------------------------------
# Design patching
# ---------------------------------------------------------------------------


@dataclass
class PatchBin:
    label: str
    lower: float
    upper: float
    count: int
    treated: int
    patched_prob: float

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "lower": self.lower,
            "upper": self.upper,
            "count": self.count,
            "treated": self.treated,
            "patched_prob": self.patched_prob,
        }


@dataclass
class PatchedDesign:
    """A design recalibrated to within-bin empirical treated frequencies."""

    base: Design
    bins: list[PatchBin]
    assignment: np.ndarray  # (n,) bin index per unit
    patched_probs: np.ndarray  # (n,)
    excluded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def as_design(self) -> Design:
        p = self.patched_probs
        return Design(np.column_stack([1.0 - p, p]), kind="patched")

    def to_json_dict(self) -> dict:
        return {
            "bins": [b.to_json_dict() for b in self.bins],
            "excluded": self.excluded.tolist(),
        }


def _recursive_split(
    pi: np.ndarray,
    w: np.ndarray,
    idx: np.ndarray,
    t_threshold: float,
    min_treated: int,
    min_control: int,
    min_total: int,
) -> list[np.ndarray]:
    """Split a bin at its median design value while arms disagree on mean pi.

    Returns leaf index sets.  A split happens when the two-sample
    t-statistic between treated and untreated design values exceeds the
    threshold and both children stay above the minimum cell sizes.
    """
    p = pi[idx]
    t1 = w[idx] == 1.0
    n1, n0 = int(t1.sum()), int((~t1).sum())
    if n1 < 2 or n0 < 2:
        return [idx]
    m1, m0 = p[t1].mean(), p[~t1].mean()
    v1 = p[t1].var(ddof=1) / n1
    v0 = p[~t1].var(ddof=1) / n0
    denom = np.sqrt(v1 + v0)
    if denom <= 0.0:
        return [idx]
    if abs(m1 - m0) / denom <= t_threshold:
        return [idx]
    med = np.median(p)
    left_mask = p <= med
    right_mask = ~left_mask
    for mask in (left_mask, right_mask):
        child_w = w[idx][mask]
        if (
            mask.sum() < min_total
            or (child_w == 1.0).sum() < min_treated
            or (child_w == 0.0).sum() < min_control
        ):
            return [idx]
    left = _recursive_split(
        pi, w, idx[left_mask], t_threshold, min_treated, min_control, min_total
    )
    right = _recursive_split(
        pi, w, idx[right_mask], t_threshold, min_treated, min_control, min_total
    )
    return left + right


def patch_design(
    design: Design,
    pop: Population,
    policy: str | int = "imbens_rubin_recursive",
    t_threshold: float = 1.96,
    min_treated: int = 3,
    min_control: int = 3,
    min_total: int = 10,
) -> PatchedDesign:
    """Discretize a binary design into bins and recalibrate within each.

    ``policy`` is either an integer (that many quantile bins over in-range
    units) or ``"imbens_rubin_recursive"``: start from one bin and keep
    splitting at the median wherever treated and untreated units still
    disagree on their mean design value and the children stay big enough.
    Out-of-range design values below 0 and above 1 each form their own bin.
    Every unit's patched probability is its bin's empirical treated share;
    bins whose share is exactly 0 or 1 mark their units as excluded from
    downstream weighting.
    """
    if design.probs.shape[1] != 2:
        raise ValueError("patching requires a binary design")
    pi = design.probs[:, 1]
    w = (pop.observed_treatment == 1).astype(float)
    n = pop.n

    low = np.nonzero(pi < 0.0)[0]
    high = np.nonzero(pi > 1.0)[0]
    interior = np.nonzero((pi >= 0.0) & (pi <= 1.0))[0]

    leaves: list[tuple[str, np.ndarray]] = []
    if low.size:
        leaves.append(("below_zero", low))
    if interior.size:
        if isinstance(policy, int) or (isinstance(policy, str) and policy.isdigit()):
            k = int(policy)
            if np.unique(pi[interior]).size <= 1:
                leaves.append(("interior_0", interior))
            else:
                edges = np.unique(np.quantile(pi[interior], np.linspace(0.0, 1.0, k + 1)))
                assign = np.clip(
                    np.searchsorted(edges, pi[interior], side="right") - 1,
                    0,
                    edges.size - 2,
                )
                for b in range(edges.size - 1):
                    members = interior[assign == b]
                    if members.size:
                        leaves.append((f"interior_{b}", members))
        elif policy == "imbens_rubin_recursive":
            parts = _recursive_split(
                pi, w, interior, t_threshold, min_treated, min_control, min_total
            )
            parts.sort(key=lambda ix: pi[ix].min())
            leaves.extend((f"interior_{b}", ix) for b, ix in enumerate(parts))
        else:
            raise ValueError(f"unknown patching policy: {policy!r}")
    if high.size:
        leaves.append(("above_one", high))

    bins: list[PatchBin] = []
    assignment = np.full(n, -1, dtype=int)
    patched = np.empty(n)
    excluded: list[int] = []
    for b, (label, members) in enumerate(leaves):
        share = float(w[members].mean())
        bins.append(
            PatchBin(
                label=label,
                lower=float(pi[members].min()),
                upper=float(pi[members].max()),
                count=int(members.size),
                treated=int(w[members].sum()),
                patched_prob=share,
            )
        )
        assignment[members] = b
        patched[members] = share
        if share in (0.0, 1.0):
            excluded.extend(int(u) for u in members)
    assert (assignment >= 0).all()
    return PatchedDesign(
        base=design,
        bins=bins,
        assignment=assignment,
        patched_probs=patched,
        excluded=np.array(sorted(excluded), dtype=int),
    )


def patched_estimate(
    pd: PatchedDesign, pop: Population, user_weights: np.ndarray, eps: float = 1e-8
) -> IpwResult:
    """IPW with the patched probabilities.

    Requires zero weight on every excluded unit (patched probability 0 or
    1), since those units have no counterfactual arm in their bin.
    """
    n = pop.n
    T = pop.observed_outcomes.shape[1]
    omega = _expand_weights(user_weights, n, 2, T)
    if pd.excluded.size:
        bad = [
            int(u)
            for u in pd.excluded
            if np.abs(omega[u, pop.observed_treatment[u]]).max() > 0.0
        ]
        if bad:
            raise ValueError(
                f"nonzero weight on excluded units (patched prob 0 or 1): {bad[:10]}"
            )
    return ipw_estimate(pd.as_design(), pop, omega, eps=eps)
