import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from errors import InvalidSpec
from proportional import ProjectionConfig, truncate_survival, truncate_survival_batch
from survival_core import BaselineHazard
from valuation import DiscountSpec, clv_batch

# customers are simulated in blocks, each with its own generator seeded from (seed, role, block),
# so any customer's draws depend only on the seed and its position
BLOCK = 10_000
TRUTH_CHUNK = 2_000
ROLES = {'calibration': 1, 'scoring': 2, 'person_periods': 3}
SHAPE_PARAMS = {'flat': ('h',), 'step': ('h1', 'h2', 'change_t'), 'decaying': ('a', 'b')}
SPEC_KEYS = {'baseline_shape', 'alpha_dist', 'n_customers', 'max_tenure', 'competing', 'seed', 'margin',
             'monthly_discount', 'score_noise_sigma', 'eps', 'max_horizon', 'odds_beta', 'odds_rows'}


@dataclass(frozen=True)
class BaselineShape:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SHAPE_PARAMS:
            raise InvalidSpec('unknown baseline shape {!r}'.format(self.kind))
        missing = [p for p in SHAPE_PARAMS[self.kind] if p not in self.params]
        if missing:
            raise InvalidSpec('{} baseline needs {}'.format(self.kind, missing))

    def rates(self, tenures):
        t = np.asarray(tenures, dtype=float)
        p = self.params
        if self.kind == 'flat':
            rates = np.full(t.shape, float(p['h']))
        elif self.kind == 'step':
            rates = np.where(t < p['change_t'], float(p['h1']), float(p['h2']))
        else:
            rates = p.get('floor', 0.0) + p['a'] * np.exp(-p['b'] * t)
        if ((rates < 0) | (rates > 1)).any():
            raise InvalidSpec('{} baseline produces hazards outside [0, 1]'.format(self.kind))
        return rates


@dataclass(frozen=True)
class AlphaDist:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == 'fixed':
            if 'a' not in self.params or self.params['a'] < 0:
                raise InvalidSpec('fixed alpha needs a >= 0')
        elif self.kind == 'lognormal':
            if 'mu' not in self.params or self.params.get('sigma', -1) < 0:
                raise InvalidSpec('lognormal alpha needs mu and sigma >= 0')
        else:
            raise InvalidSpec('unknown alpha distribution {!r}'.format(self.kind))

    def draw(self, normals):
        # driven by standard normals so every distribution consumes the stream the same way
        if self.kind == 'fixed':
            return np.full(len(normals), float(self.params['a']))
        return np.exp(self.params['mu'] + self.params['sigma'] * normals)


@dataclass(frozen=True)
class CompetingSpec:
    f_v: float
    alpha_inv_dist: Optional[AlphaDist] = None

    def __post_init__(self):
        if not 0 <= self.f_v <= 1:
            raise InvalidSpec('f_v must be in [0, 1], got {}'.format(self.f_v))


@dataclass(frozen=True)
class SimSpec:
    baseline_shape: BaselineShape
    alpha_dist: AlphaDist
    n_customers: int
    max_tenure: int
    competing: Optional[CompetingSpec] = None
    seed: int = 0
    margin: float = 1.0
    monthly_discount: float = 0.0
    score_noise_sigma: float = 0.0
    eps: float = 1e-6
    max_horizon: int = 1200
    odds_beta: Optional[tuple] = None
    odds_rows: int = 50_000

    def __post_init__(self):
        if self.n_customers < 1:
            raise InvalidSpec('n_customers must be >= 1')
        if self.max_tenure < 0:
            raise InvalidSpec('max_tenure must be >= 0')
        if self.score_noise_sigma < 0:
            raise InvalidSpec('score_noise_sigma must be >= 0')
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidSpec('seed must be a 64-bit unsigned integer')

    @property
    def projection(self):
        return ProjectionConfig(self.eps, self.max_horizon)


@dataclass(frozen=True, eq=False)
class SimTruth:
    frame: pd.DataFrame          # customer_id, true_alpha[, true_alpha_inv], true_ert, true_clv
    tenures: np.ndarray
    clipped: int
    spec: SimSpec

    def hazard_path(self, i, horizon=None):
        alpha = self.frame['true_alpha'].to_numpy()[i:i + 1]
        alpha_inv = self.frame['true_alpha_inv'].to_numpy()[i:i + 1] if 'true_alpha_inv' in self.frame else alpha
        return true_hazard_paths(self.spec, self.tenures[i:i + 1], alpha, alpha_inv, horizon)[0]


def _shape_from_dict(doc):
    doc = dict(doc)
    return BaselineShape(doc.pop('kind', None), doc)


def _alpha_from_dict(doc):
    doc = dict(doc)
    return AlphaDist(doc.pop('kind', None), doc)


def spec_from_dict(doc):
    unknown = set(doc) - SPEC_KEYS
    if unknown:
        raise InvalidSpec('unknown simulation spec keys {}'.format(sorted(unknown)))
    for key in ('baseline_shape', 'alpha_dist', 'n_customers', 'max_tenure'):
        if key not in doc:
            raise InvalidSpec('simulation spec is missing {!r}'.format(key))
    kwargs = dict(doc)
    kwargs['baseline_shape'] = _shape_from_dict(doc['baseline_shape'])
    kwargs['alpha_dist'] = _alpha_from_dict(doc['alpha_dist'])
    if doc.get('competing') is not None:
        competing = doc['competing']
        inv = competing.get('alpha_inv_dist')
        kwargs['competing'] = CompetingSpec(competing['f_v'], None if inv is None else _alpha_from_dict(inv))
    if doc.get('odds_beta') is not None:
        kwargs['odds_beta'] = tuple(float(b) for b in doc['odds_beta'])
    return SimSpec(**kwargs)


def load_spec(path):
    with open(path) as f:
        return spec_from_dict(json.load(f))


def _rng(seed, role, block):
    return np.random.default_rng([seed, ROLES[role], block])


def _draw(spec, role, n):
    # every block draws the same arrays in the same order whatever the spec options
    draws = {k: [] for k in ('tenure', 'alpha_z', 'alpha_inv_z', 'churn_u', 'cause_u', 'noise_z')}
    for block, start in enumerate(range(0, n, BLOCK)):
        rng = _rng(spec.seed, role, block)
        size = min(BLOCK, n - start)
        draws['tenure'].append(rng.integers(0, spec.max_tenure + 1, size))
        for key in ('alpha_z', 'alpha_inv_z'):
            draws[key].append(rng.standard_normal(size))
        for key in ('churn_u', 'cause_u'):
            draws[key].append(rng.random(size))
        draws['noise_z'].append(rng.standard_normal(size))
    return {k: np.concatenate(v) for k, v in draws.items()}


def _alphas(spec, draws):
    alpha = spec.alpha_dist.draw(draws['alpha_z'])
    if spec.competing is not None and spec.competing.alpha_inv_dist is not None:
        return alpha, spec.competing.alpha_inv_dist.draw(draws['alpha_inv_z'])
    return alpha, alpha


def _sub_hazards(spec, h0, alpha, alpha_inv):
    # unclipped cause-specific hazards; a single-risk cohort puts everything on the first cause
    if spec.competing is None:
        return alpha * h0, np.zeros_like(h0)
    f_v = spec.competing.f_v
    return alpha * f_v * h0, alpha_inv * (1.0 - f_v) * h0


def true_hazard_paths(spec, tenures, alpha, alpha_inv=None, horizon=None):
    horizon = spec.max_horizon if horizon is None else horizon
    alpha_inv = alpha if alpha_inv is None else alpha_inv
    tenures = np.asarray(tenures, dtype=np.int64)
    h0 = spec.baseline_shape.rates(tenures[:, None] + np.arange(horizon)[None, :])
    h_v, h_inv = _sub_hazards(spec, h0, np.asarray(alpha)[:, None], np.asarray(alpha_inv)[:, None])
    return np.minimum(1.0, h_v + h_inv)


def true_ert(hazard_path, eps=1e-6, max_horizon=1200):
    survival, _ = truncate_survival(hazard_path, ProjectionConfig(eps, max_horizon))
    return float(survival.sum())


def true_baseline(shape, max_tenure, exposure=10 ** 9):
    """
    BaselineHazard carrying the generating hazards exactly, with exposures large enough that
    pooling never kicks in; the tail holds the rate at max_tenure.
    """
    rates = shape.rates(np.arange(max_tenure + 1))
    exposures = np.full(max_tenure + 1, exposure, dtype=np.int64)
    events = np.rint(rates * exposure).astype(np.int64)
    return BaselineHazard(hazards=rates, exposures=exposures, events=events, tail_start=max_tenure,
                          tail_rate=float(rates[-1]), smoothing='none')


def _ids(prefix, n):
    return pd.Series(np.arange(1, n + 1)).map(lambda i: '{}{:07d}'.format(prefix, i))


def _calibration(spec):
    n = spec.n_customers
    draws = _draw(spec, 'calibration', n)
    alpha, alpha_inv = _alphas(spec, draws)
    h_v, h_inv = _sub_hazards(spec, spec.baseline_shape.rates(draws['tenure']), alpha, alpha_inv)
    total = h_v + h_inv
    clipped = int((total > 1).sum())
    churned = draws['churn_u'] < np.minimum(1.0, total)
    frame = pd.DataFrame({'customer_id': _ids('c', n), 'tenure': draws['tenure'], 'churned': churned.astype(int)})
    if spec.competing is not None:
        with np.errstate(divide='ignore', invalid='ignore'):
            share_v = np.where(total > 0, h_v / total, 1.0)
        cause = np.where(draws['cause_u'] < share_v, 'V', 'I')
        frame['cause'] = np.where(churned, cause, '')
    return frame, clipped


def _scoring(spec):
    n = spec.n_customers
    draws = _draw(spec, 'scoring', n)
    alpha, alpha_inv = _alphas(spec, draws)
    h_v, h_inv = _sub_hazards(spec, spec.baseline_shape.rates(draws['tenure']), alpha, alpha_inv)
    total = h_v + h_inv
    clipped = int((total > 1).sum())
    # a perfect churn model unless noise is asked for
    noise = np.exp(spec.score_noise_sigma * draws['noise_z']) if spec.score_noise_sigma > 0 else np.ones(n)
    noisy = total * noise
    with np.errstate(divide='ignore', invalid='ignore'):
        shrink = np.where(noisy > 1, 1.0 / noisy, 1.0)
    frame = pd.DataFrame({'customer_id': _ids('s', n), 'tenure': draws['tenure']})
    if spec.competing is None:
        frame['churn_score'] = np.minimum(1.0, noisy)
    else:
        # both causes shrink by the same factor so their sum stays a probability
        frame['score_v'] = np.minimum(1.0, h_v * noise * shrink)
        frame['score_inv'] = np.minimum(1.0, h_inv * noise * shrink)
    frame['margin'] = spec.margin
    return frame, alpha, alpha_inv, clipped


def _truth(spec, scoring, alpha, alpha_inv):
    tenures = scoring['tenure'].to_numpy()
    discount = DiscountSpec(spec.monthly_discount)
    ert, clv = [], []
    for start in range(0, len(tenures), TRUTH_CHUNK):
        rows = slice(start, start + TRUTH_CHUNK)
        paths = true_hazard_paths(spec, tenures[rows], alpha[rows], alpha_inv[rows])
        survival, _ = truncate_survival_batch(paths, spec.eps)
        ert.append(survival.sum(axis=1))
        clv.append(clv_batch(survival, np.full(len(paths), spec.margin), discount))
    frame = pd.DataFrame({'customer_id': scoring['customer_id'], 'true_alpha': alpha})
    if spec.competing is not None:
        frame['true_alpha_inv'] = alpha_inv
    frame['true_ert'] = np.concatenate(ert)
    frame['true_clv'] = np.concatenate(clv)
    return frame


def generate_cohort(spec):
    """
    input: a SimSpec
    output: (calibration frame, scoring frame, SimTruth), identical for identical specs
    Calibration rows are a snapshot: each customer's tenure and whether they churned in the month after.
    Scoring rows are live customers whose churn score is their true next-month hazard.
    """
    calibration, clipped_calibration = _calibration(spec)
    scoring, alpha, alpha_inv, clipped_scoring = _scoring(spec)
    clipped = clipped_calibration + clipped_scoring
    if clipped:
        logging.warning('{} simulated customers had hazards above 1 at their tenure; clipped'.format(clipped))
    truth = SimTruth(frame=_truth(spec, scoring, alpha, alpha_inv), tenures=scoring['tenure'].to_numpy(),
                     clipped=clipped, spec=spec)
    logging.info('simulated {} calibration and {} scoring customers (seed {})'.format(
        len(calibration), len(scoring), spec.seed))
    return calibration, scoring, truth


def generate_person_periods(shape, beta, n_rows, max_tenure, seed):
    """
    Rows drawn from the odds model: churned ~ Bernoulli(expit(logit(h0(tenure)) + x . beta)),
    x ~ N(0, I). Columns customer_id, tenure, churned, x_1..x_m.
    """
    beta = np.asarray(beta, dtype=float)
    if not 0 <= seed < 2 ** 64:
        raise InvalidSpec('seed must be a 64-bit unsigned integer')
    tenure, x, u = [], [], []
    for block, start in enumerate(range(0, n_rows, BLOCK)):
        rng = _rng(seed, 'person_periods', block)
        size = min(BLOCK, n_rows - start)
        tenure.append(rng.integers(0, max_tenure + 1, size))
        x.append(rng.standard_normal((size, len(beta))))
        u.append(rng.random(size))
    tenure, x, u = np.concatenate(tenure), np.concatenate(x), np.concatenate(u)
    h0 = shape.rates(tenure)
    if ((h0 <= 0) | (h0 >= 1)).any():
        raise InvalidSpec('odds model rows need baseline hazards strictly inside (0, 1)')
    churned = u < expit(logit(h0) + x @ beta)
    frame = pd.DataFrame({'customer_id': _ids('p', n_rows), 'tenure': tenure, 'churned': churned.astype(int)})
    for j in range(len(beta)):
        frame['x_{}'.format(j + 1)] = x[:, j]
    return frame
