"""Similarity and reliability metrics for saliency maps.

The similarity index of two maps M_x, M_y uses the standard structural
form

    SSIM = (2*mu_x*mu_y + C1) * (2*cov_xy + C2)
           ---------------------------------------------
           (mu_x^2 + mu_y^2 + C1) * (var_x + var_y + C2)

with the stabilizers C1 = 0.01 and C2 = 0.03 applied directly (not the
squared K*L convention).  The default realization slides a uniform 11x11
window with stride 1 and averages the per-window values over windows that
lie fully inside both validity masks; a ``global`` mode evaluates the
formula once over all jointly-valid pixels.  Statistics use the biased
(moment) estimators.

On [0, 1]-normalized maps the windowed mean can dip below 0 for strongly
anti-correlated inputs; values are clamped to [0, 1] (so the distance
d = 1 - SSIM stays in range) and clamping events are counted.

Consistency is the mean SSIM over pairs whose prediction survived the
transform; sensitivity is the mean d over pairs where the prediction
changed (by transform or by checkpoint swap); COSE is their harmonic mean
expressed as a percentage.  Empty record sets raise
:class:`UndefinedMetricError` rather than silently scoring 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

__all__ = [
    "SsimParams",
    "SsimResult",
    "UndefinedMetricError",
    "NoOverlapError",
    "UndefinedCorrelationError",
    "ssim",
    "ssim_detailed",
    "distance",
    "consistency",
    "sensitivity",
    "cose",
    "checkpoint_correlation",
    "CorrelationResult",
    "EvalRecord",
    "MetricReport",
    "aggregate_records",
]


class UndefinedMetricError(ValueError):
    """An aggregate was requested over an empty record set."""


class NoOverlapError(ValueError):
    """No window (or pixel) is valid in both masks."""


class UndefinedCorrelationError(ValueError):
    """Correlation undefined: too few points or zero variance."""


@dataclass(frozen=True)
class SsimParams:
    c1: float = 0.01
    c2: float = 0.03
    window: int = 11
    mode: str = "windowed"

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("stabilizers c1, c2 must be positive")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {self.window}")
        if self.mode not in ("windowed", "global"):
            raise ValueError(f"mode must be 'windowed' or 'global', got {self.mode!r}")


@dataclass(frozen=True)
class SsimResult:
    value: float
    coverage: float  # fraction of windows (or pixels) that were valid
    clamped: bool
    n_valid: int


def _unwrap(m, mask):
    values = getattr(m, "values", m)
    if mask is None:
        mask = getattr(m, "mask", None)
    arr = np.asarray(values, dtype=np.float64)
    if mask is None:
        mask = np.ones(arr.shape, dtype=bool)
    return arr, np.asarray(mask, dtype=bool)


def _formula(mu_x, mu_y, var_x, var_y, cov, c1, c2):
    return ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )


def ssim_detailed(map_a, map_b, params: SsimParams | None = None, mask_a=None, mask_b=None) -> SsimResult:
    """Full similarity computation with coverage and clamp reporting.

    Accepts bare 2-D arrays or objects with ``values``/``mask`` fields.
    Symmetric in its arguments; identical inputs score exactly 1.
    """
    params = params or SsimParams()
    a, ma = _unwrap(map_a, mask_a)
    b, mb = _unwrap(map_b, mask_b)
    if a.shape != b.shape:
        raise ValueError(f"map shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"maps must be 2-D, got shape {a.shape}")
    joint = ma & mb

    if params.mode == "global":
        n_total = a.size
        n = int(joint.sum())
        if n == 0:
            raise NoOverlapError("no jointly valid pixels for global similarity")
        av, bv = a[joint], b[joint]
        mu_x, mu_y = av.mean(), bv.mean()
        var_x = (av * av).mean() - mu_x * mu_x
        var_y = (bv * bv).mean() - mu_y * mu_y
        cov = (av * bv).mean() - mu_x * mu_y
        raw = _formula(mu_x, mu_y, var_x, var_y, cov, params.c1, params.c2)
        value = min(1.0, max(0.0, float(raw)))
        return SsimResult(value, n / n_total, value != raw, n)

    w = params.window
    h, wid = a.shape
    if h < w or wid < w:
        raise ValueError(f"maps {a.shape} smaller than the {w}x{w} window")
    n_area = w * w

    wins_a = np.lib.stride_tricks.sliding_window_view(a, (w, w))
    wins_b = np.lib.stride_tricks.sliding_window_view(b, (w, w))
    wins_m = np.lib.stride_tricks.sliding_window_view(joint, (w, w))
    valid = wins_m.all(axis=(-2, -1))
    n_windows = valid.size
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise NoOverlapError("no window lies fully inside both validity masks")

    s1 = wins_a.sum(axis=(-2, -1))
    s2 = wins_b.sum(axis=(-2, -1))
    s11 = (wins_a * wins_a).sum(axis=(-2, -1))
    s22 = (wins_b * wins_b).sum(axis=(-2, -1))
    s12 = (wins_a * wins_b).sum(axis=(-2, -1))
    mu_x = s1 / n_area
    mu_y = s2 / n_area
    var_x = s11 / n_area - mu_x * mu_x
    var_y = s22 / n_area - mu_y * mu_y
    cov = s12 / n_area - mu_x * mu_y
    per_window = _formula(mu_x, mu_y, var_x, var_y, cov, params.c1, params.c2)
    raw = float(per_window[valid].mean())
    value = min(1.0, max(0.0, raw))
    return SsimResult(value, n_valid / n_windows, value != raw, n_valid)


def ssim(map_a, map_b, params: SsimParams | None = None, mask_a=None, mask_b=None) -> float:
    return ssim_detailed(map_a, map_b, params, mask_a, mask_b).value


def distance(map_a, map_b, params: SsimParams | None = None, mask_a=None, mask_b=None) -> float:
    """d = 1 - SSIM; zero for identical maps, symmetric."""
    return 1.0 - ssim(map_a, map_b, params, mask_a, mask_b)


# ---------------------------------------------------------------------------
# record aggregation


@dataclass(frozen=True)
class EvalRecord:
    """One scored (image, perturbation) pair.

    ``perturbation`` is a transform token (``name:idx:sign``) or
    ``checkpoint:<epoch>``; ``score`` holds the SSIM value for equivalent
    (consistent) pairs and the distance d for non-equivalent (sensitive)
    pairs.
    """

    image_id: str
    perturbation: str
    kind: str  # photometric | geometric | checkpoint
    equivalent: bool
    score: float
    method: str
    magnitude_index: int | None = None
    mask_coverage: float = 1.0
    clamped: bool = False

    def __post_init__(self):
        if self.kind not in ("photometric", "geometric", "checkpoint"):
            raise ValueError(f"bad record kind {self.kind!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.kind == "checkpoint" and self.equivalent:
            raise ValueError("checkpoint records only enter the sensitive set")


def consistency(records) -> float:
    """Mean SSIM over transform pairs whose prediction did not change."""
    scores = []
    for r in records:
        if not r.equivalent or r.kind == "checkpoint":
            raise ValueError("consistency expects equivalent transform records only")
        scores.append(r.score)
    if not scores:
        raise UndefinedMetricError("consistency undefined: no consistent pairs (N = 0)")
    return math.fsum(scores) / len(scores)


def sensitivity(records) -> float:
    """Mean d over pairs whose prediction changed (transform or checkpoint)."""
    scores = []
    for r in records:
        if r.equivalent:
            raise ValueError("sensitivity expects non-equivalent records only")
        scores.append(r.score)
    if not scores:
        raise UndefinedMetricError("sensitivity undefined: no sensitive pairs (M = 0)")
    return math.fsum(scores) / len(scores)


def cose(consistency_value: float, sensitivity_value: float) -> float:
    """Harmonic mean of consistency and sensitivity, in percent.

    Returns 0 when both inputs are 0 (documented limit rule); equal
    inputs map to themselves exactly.
    """
    c, s = float(consistency_value), float(sensitivity_value)
    for name, v in (("consistency", c), ("sensitivity", s)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} {v} outside [0, 1]")
    if c == s:
        return c * 100.0
    return (2.0 * c * s / (c + s)) * 100.0


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    p_value: float
    significant: bool
    n: int
    alpha: float = 0.05


def checkpoint_correlation(pairs, alpha: float = 0.05) -> CorrelationResult:
    """Pearson correlation of (accuracy, SSIM-to-final) pairs.

    The two-sided p-value comes from the t-distribution with n - 2
    degrees of freedom; the significance flag applies ``alpha``.
    """
    pairs = list(pairs)
    if len(pairs) < 3:
        raise UndefinedCorrelationError(f"need >= 3 pairs, got {len(pairs)}")
    x = np.asarray([p[0] for p in pairs], dtype=np.float64)
    y = np.asarray([p[1] for p in pairs], dtype=np.float64)
    xd = x - x.mean()
    yd = y - y.mean()
    sxx = float(np.sum(xd * xd))
    syy = float(np.sum(yd * yd))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("zero variance in one coordinate")
    r = float(np.sum(xd * yd) / math.sqrt(sxx * syy))
    r = max(-1.0, min(1.0, r))
    n = len(pairs)
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = 2.0 * float(scipy.stats.t.sf(abs(t), df=n - 2))
    return CorrelationResult(r, p, p < alpha, n)


# ---------------------------------------------------------------------------
# per-cell report


@dataclass
class BreakdownCell:
    n_consistent: int = 0
    sum_ssim: float = 0.0
    n_sensitive: int = 0
    sum_d: float = 0.0

    @property
    def mean_ssim(self):
        return self.sum_ssim / self.n_consistent if self.n_consistent else None

    @property
    def mean_d(self):
        return self.sum_d / self.n_sensitive if self.n_sensitive else None


@dataclass
class MetricReport:
    """Aggregated consistency / sensitivity / COSE for one
    (method, model, dataset) cell, with per-transform and per-magnitude
    breakdowns and bookkeeping that makes every number auditable."""

    method: str
    model_id: str
    dataset_id: str
    consistency: float | None
    sensitivity: float | None
    cose: float | None
    n_consistent: int
    m_sensitive: int
    m_sensitive_transform: int
    m_sensitive_checkpoint: int
    clamp_events: int
    mean_mask_coverage: float
    undefined: tuple[str, ...] = ()
    per_transform: dict = field(default_factory=dict)
    per_magnitude: dict = field(default_factory=dict)


def aggregate_records(records, method: str, model_id: str = "micro-cnn", dataset_id: str = "toy") -> MetricReport:
    """Build a MetricReport from one method's records.

    Records are re-sorted by (image_id, perturbation) so aggregation is
    independent of production order; sums use compensated summation.
    """
    records = sorted(records, key=lambda r: (r.image_id, r.perturbation))
    consistent = [r for r in records if r.equivalent]
    sensitive = [r for r in records if not r.equivalent]
    undefined = []

    c_val = s_val = cose_val = None
    try:
        c_val = consistency(consistent)
    except UndefinedMetricError as exc:
        undefined.append(str(exc))
    try:
        s_val = sensitivity(sensitive)
    except UndefinedMetricError as exc:
        undefined.append(str(exc))
    if c_val is not None and s_val is not None:
        cose_val = cose(c_val, s_val)

    per_transform: dict[str, BreakdownCell] = {}
    per_magnitude: dict[tuple[str, int], BreakdownCell] = {}
    for r in records:
        if r.kind == "checkpoint":
            continue
        name = r.perturbation.split(":")[0]
        cells = [per_transform.setdefault(name, BreakdownCell())]
        if r.magnitude_index is not None:
            cells.append(per_magnitude.setdefault((r.kind, r.magnitude_index), BreakdownCell()))
        for cell in cells:
            if r.equivalent:
                cell.n_consistent += 1
                cell.sum_ssim += r.score
            else:
                cell.n_sensitive += 1
                cell.sum_d += r.score

    coverage = [r.mask_coverage for r in records]
    return MetricReport(
        method=method,
        model_id=model_id,
        dataset_id=dataset_id,
        consistency=c_val,
        sensitivity=s_val,
        cose=cose_val,
        n_consistent=len(consistent),
        m_sensitive=len(sensitive),
        m_sensitive_transform=sum(1 for r in sensitive if r.kind != "checkpoint"),
        m_sensitive_checkpoint=sum(1 for r in sensitive if r.kind == "checkpoint"),
        clamp_events=sum(1 for r in records if r.clamped),
        mean_mask_coverage=float(np.mean(coverage)) if coverage else 1.0,
        undefined=tuple(undefined),
        per_transform=per_transform,
        per_magnitude=per_magnitude,
    )
