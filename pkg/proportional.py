import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from errors import DegenerateBaseline, InvalidSpec
from survival_core import SurvivalCurve, hazard_at, hazard_table, parts_table, pooling_guide


@dataclass(frozen=True)
class ProjectionConfig:
    eps: float = 1e-6
    max_horizon: int = 1200

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise InvalidSpec('eps must be in (0, 1), got {}'.format(self.eps))
        if self.max_horizon < 1:
            raise InvalidSpec('max_horizon must be >= 1, got {}'.format(self.max_horizon))


@dataclass(frozen=True)
class Alpha:
    """
    Per-customer multiplier on the baseline hazard. When built from a churn score it remembers the
    score and the baseline hazard it was divided by, so value * reference gives back the score exactly.
    """
    value: float
    score: Optional[float] = None
    reference: Optional[float] = None

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value >= 0):
            raise InvalidSpec('alpha must be finite and >= 0, got {}'.format(self.value))

    def scale(self, hazards):
        hazards = np.asarray(hazards, dtype=float)
        scaled = self.value * hazards
        if self.score is not None:
            scaled = np.where(hazards == self.reference, self.score, scaled)
        return scaled


@dataclass(frozen=True, eq=False)
class CustomerProjection:
    alpha: Alpha
    hazard_path: np.ndarray
    survival_path: SurvivalCurve
    ert_months: float
    truncated_at: int
    alpha_inv: Optional[Alpha] = None


@dataclass(frozen=True, eq=False)
class BatchProjection:
    alpha: np.ndarray
    survival: np.ndarray        # rows are customers, zero past each row's truncation point
    truncated_at: np.ndarray
    alpha_inv: Optional[np.ndarray] = None

    @property
    def ert(self):
        return self.survival.sum(axis=1)


def check_score(score, name='churn score'):
    if not 0 <= score <= 1:
        raise InvalidSpec('{} must be in [0, 1], got {}'.format(name, score))
    return float(score)


def compute_alpha(score, baseline, t0, pooling=None, guide=None):
    score = check_score(score)
    reference = hazard_at(baseline, t0, pooling, guide)
    if reference == 0:
        # zero over zero scales to zero
        if score == 0:
            return Alpha(0.0, 0.0, 0.0)
        raise DegenerateBaseline(t0)
    return Alpha(score / reference, score, reference)


def project_hazard(alpha, baseline, t0, horizon, pooling=None):
    if horizon < 1:
        raise InvalidSpec('horizon must be >= 1, got {}'.format(horizon))
    baseline_path = hazard_table(baseline, t0 + horizon, pooling)[t0:]
    return np.minimum(1.0, alpha.scale(baseline_path))


def truncate_survival(hazard_path, config=ProjectionConfig()):
    """
    input: hazards from the current tenure onwards
    output: (survival values up to and including the truncation point, truncated_at)
    Stops at the first month survival drops under eps, or at max_horizon - 1.
    """
    hazards = np.asarray(hazard_path, dtype=float)[:config.max_horizon]
    survival = np.cumprod(1.0 - hazards)
    below = np.flatnonzero(survival < config.eps)
    cut = int(below[0]) if len(below) else len(survival) - 1
    return survival[:cut + 1], cut


def truncate_survival_batch(hazards, eps):
    survival = np.cumprod(1.0 - hazards, axis=1)
    below = survival < eps
    cut = np.where(below.any(axis=1), below.argmax(axis=1), hazards.shape[1] - 1)
    survival[np.arange(hazards.shape[1])[None, :] > cut[:, None]] = 0.0
    return survival, cut


def expected_remaining_tenure(alpha, baseline, t0, config=ProjectionConfig(), pooling=None):
    path = project_hazard(alpha, baseline, t0, config.max_horizon, pooling)
    survival, cut = truncate_survival(path, config)
    return float(survival.sum()), SurvivalCurve(values=survival), cut


def _projection(alpha, path, config, alpha_inv=None):
    survival, cut = truncate_survival(path, config)
    return CustomerProjection(alpha=alpha, hazard_path=path[:cut + 1], survival_path=SurvivalCurve(values=survival),
                              ert_months=float(survival.sum()), truncated_at=cut, alpha_inv=alpha_inv)


def project_customer(score, baseline, t0, config=ProjectionConfig(), pooling=None):
    alpha = compute_alpha(score, baseline, t0, pooling)
    return _projection(alpha, project_hazard(alpha, baseline, t0, config.max_horizon, pooling), config)


def _combined(alpha_v, alpha_inv, scaled_v, scaled_inv, parts_v, parts_inv):
    # sub-hazards over common exposures are added as counts before dividing, so that
    # unit multipliers reproduce the whole-base hazard exactly (d_v + d_inv = d)
    summed = scaled_v + scaled_inv
    (num_v, den_v), (num_inv, den_inv) = parts_v, parts_inv
    shared = (den_v == den_inv) & (den_v > 0)
    both = (np.asarray(alpha_v) != 0) & (np.asarray(alpha_inv) != 0)
    with np.errstate(divide='ignore', invalid='ignore'):
        pooled = (alpha_v * num_v + alpha_inv * num_inv) / den_v
    return np.minimum(1.0, np.where(shared & both, pooled, summed))


def combined_hazard_path(alpha_v, alpha_inv, baseline_v, baseline_inv, t0, horizon, pooling=None):
    length = t0 + horizon
    guide = pooling_guide(baseline_v, baseline_inv)
    scaled_v = alpha_v.scale(hazard_table(baseline_v, length, pooling, guide)[t0:])
    scaled_inv = alpha_inv.scale(hazard_table(baseline_inv, length, pooling, guide)[t0:])
    num_v, den_v = parts_table(baseline_v, length, pooling, guide)
    num_inv, den_inv = parts_table(baseline_inv, length, pooling, guide)
    return _combined(alpha_v.value, alpha_inv.value, scaled_v, scaled_inv,
                     (num_v[t0:], den_v[t0:]), (num_inv[t0:], den_inv[t0:]))


def project_competing(score_v, score_inv, baseline_v, baseline_inv, t0, config=ProjectionConfig(), pooling=None):
    guide = pooling_guide(baseline_v, baseline_inv)
    alpha_v = compute_alpha(check_score(score_v, 'score_v'), baseline_v, t0, pooling, guide)
    alpha_inv = compute_alpha(check_score(score_inv, 'score_inv'), baseline_inv, t0, pooling, guide)
    path = combined_hazard_path(alpha_v, alpha_inv, baseline_v, baseline_inv, t0, config.max_horizon, pooling)
    return _projection(alpha_v, path, config, alpha_inv=alpha_inv)


def project_summed(score_v, score_inv, baseline, t0, config=ProjectionConfig(), pooling=None):
    # the coarse alternative to competing risks: one score, the sum of both, against the whole base
    total = check_score(score_v, 'score_v') + check_score(score_inv, 'score_inv')
    return project_customer(min(total, 1.0), baseline, t0, config, pooling)


def _batch_alpha(scores, reference, t0s, ids):
    degenerate = np.flatnonzero((reference == 0) & (scores > 0))
    if len(degenerate):
        i = degenerate[0]
        raise DegenerateBaseline(int(t0s[i]), None if ids is None else ids[i])
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(reference > 0, scores / reference, 0.0)


def _scaled_batch(table, t0s, scores, horizon, ids):
    reference = table[t0s]
    alpha = _batch_alpha(scores, reference, t0s, ids)
    base = table[t0s[:, None] + np.arange(horizon)[None, :]]
    scaled = np.where(base == reference[:, None], scores[:, None], alpha[:, None] * base)
    return alpha, scaled


def project_batch(scores, t0s, baseline, config=ProjectionConfig(), pooling=None, ids=None):
    """
    Vectorised project_customer for a chunk of customers. Rows are independent, so any
    partition of the customers gives the same per-row results.
    """
    scores = np.asarray(scores, dtype=float)
    t0s = np.asarray(t0s, dtype=np.int64)
    if len(scores) == 0:
        empty = np.zeros((0, config.max_horizon))
        return BatchProjection(alpha=np.zeros(0), survival=empty, truncated_at=np.zeros(0, dtype=np.int64))
    table = hazard_table(baseline, int(t0s.max()) + config.max_horizon, pooling)
    alpha, scaled = _scaled_batch(table, t0s, scores, config.max_horizon, ids)
    hazards = np.minimum(1.0, scaled)
    clipped = int((scaled > 1.0).any(axis=1).sum())
    if clipped:
        logging.debug('{} customers have projected hazards clipped at 1'.format(clipped))
    survival, cut = truncate_survival_batch(hazards, config.eps)
    return BatchProjection(alpha=alpha, survival=survival, truncated_at=cut)


def project_competing_batch(scores_v, scores_inv, t0s, baseline_v, baseline_inv, config=ProjectionConfig(),
                            pooling=None, ids=None):
    scores_v = np.asarray(scores_v, dtype=float)
    scores_inv = np.asarray(scores_inv, dtype=float)
    t0s = np.asarray(t0s, dtype=np.int64)
    if len(t0s) == 0:
        empty = np.zeros((0, config.max_horizon))
        return BatchProjection(alpha=np.zeros(0), survival=empty, truncated_at=np.zeros(0, dtype=np.int64),
                               alpha_inv=np.zeros(0))
    horizon = config.max_horizon
    length = int(t0s.max()) + horizon
    cells = t0s[:, None] + np.arange(horizon)[None, :]
    guide = pooling_guide(baseline_v, baseline_inv)
    table_v = hazard_table(baseline_v, length, pooling, guide)
    table_inv = hazard_table(baseline_inv, length, pooling, guide)
    alpha_v, scaled_v = _scaled_batch(table_v, t0s, scores_v, horizon, ids)
    alpha_inv, scaled_inv = _scaled_batch(table_inv, t0s, scores_inv, horizon, ids)
    num_v, den_v = parts_table(baseline_v, length, pooling, guide)
    num_inv, den_inv = parts_table(baseline_inv, length, pooling, guide)
    hazards = _combined(alpha_v[:, None], alpha_inv[:, None], scaled_v, scaled_inv,
                        (num_v[cells], den_v[cells]), (num_inv[cells], den_inv[cells]))
    survival, cut = truncate_survival_batch(hazards, config.eps)
    return BatchProjection(alpha=alpha_v, survival=survival, truncated_at=cut, alpha_inv=alpha_inv)
