"""
Discrete-time hazard model where the hazard odds, not the hazards, are proportional:

    h(t) / (1 - h(t)) = h0(t) / (1 - h0(t)) * exp(beta . x)

h0 is the nonparametric baseline, entering the fit as a fixed log-odds offset. beta is fitted by
Newton-Raphson on the (optionally ridge penalised) Bernoulli log-likelihood with step halving.
"""
import json
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from errors import EmptyCalibration, FitDiverged, InvalidSpec, OffsetUndefined, UnsupportedVersion
from proportional import (Alpha, BatchProjection, CustomerProjection, ProjectionConfig, truncate_survival,
                          truncate_survival_batch)
from survival_core import SurvivalCurve, baseline_sha, hazard_table

MODEL_VERSION = 1
MAX_HALVINGS = 30
# a flat log-likelihood with Newton steps still this large means the coefficients run off to infinity
SEPARATION_STEP = 0.1
# keeps predictions representable inside (0, 1)
_LOWEST = np.finfo(float).tiny
_HIGHEST = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class PersonPeriodRow:
    tenure: int
    outcome: int
    covariates: tuple


@dataclass(frozen=True, eq=False)
class OddsModel:
    beta: np.ndarray
    baseline_sha: str
    log_likelihood: float
    iterations: int
    converged: bool
    ridge: float = 1e-6
    history: tuple = ()


def covariate_columns(frame):
    return [c for c in frame.columns if c.startswith('x_')]


def design(rows):
    """
    input: person-period rows, either PersonPeriodRow objects or a DataFrame with tenure,
    outcome (or churned) and x_1..x_m columns
    output: (tenure, y, X) arrays
    """
    if isinstance(rows, pd.DataFrame):
        outcome = 'outcome' if 'outcome' in rows.columns else 'churned'
        columns = covariate_columns(rows)
        tenure = rows['tenure'].to_numpy(dtype=np.int64)
        y = rows[outcome].to_numpy(dtype=float)
        X = rows[columns].to_numpy(dtype=float).reshape(len(rows), len(columns))
    else:
        rows = list(rows)
        tenure = np.array([r.tenure for r in rows], dtype=np.int64)
        y = np.array([r.outcome for r in rows], dtype=float)
        X = np.array([r.covariates for r in rows], dtype=float).reshape(len(rows), -1)
    if len(y) == 0:
        raise EmptyCalibration('person-period rows')
    if X.shape[1] < 1:
        raise InvalidSpec('the odds model needs at least one covariate')
    if not np.isin(y, (0, 1)).all():
        raise InvalidSpec('outcomes must be 0 or 1')
    if not np.isfinite(X).all():
        raise InvalidSpec('covariates must be finite')
    return tenure, y, X


def _baseline_path(baseline, start, length, pooling=None):
    h0 = hazard_table(baseline, start + length, pooling)[start:]
    bad = np.flatnonzero((h0 <= 0) | (h0 >= 1))
    if len(bad):
        raise OffsetUndefined(start + int(bad[0]), h0[bad[0]])
    return h0


def offsets(baseline, tenure, pooling=None):
    needed = np.unique(tenure)
    h0 = hazard_table(baseline, int(needed[-1]) + 1, pooling)
    bad = needed[(h0[needed] <= 0) | (h0[needed] >= 1)]
    if len(bad):
        raise OffsetUndefined(int(bad[0]), h0[bad[0]])
    return logit(h0)[tenure]


def log_likelihood(beta, X, y, offset, ridge=0.0):
    eta = offset + X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * ridge * beta @ beta)


def score_vector(beta, X, y, offset, ridge=0.0):
    return X.T @ (y - expit(offset + X @ beta)) - ridge * beta


def information_matrix(beta, X, offset, ridge=0.0):
    eta = offset + X @ beta
    weights = expit(eta) * expit(-eta)
    return (X * weights[:, None]).T @ X + ridge * np.eye(X.shape[1])


def fit_odds_model(rows, baseline, ridge=1e-6, tol=1e-8, max_iter=50, pooling=None):
    tenure, y, X = design(rows)
    offset = offsets(baseline, tenure, pooling)
    beta = np.zeros(X.shape[1])
    objective = log_likelihood(beta, X, y, offset, ridge)
    history = [objective]
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        step = np.linalg.lstsq(information_matrix(beta, X, offset, ridge),
                               score_vector(beta, X, y, offset, ridge), rcond=None)[0]
        if not np.isfinite(step).all():
            raise FitDiverged('non-finite Newton step', beta, iteration)
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = beta + scale * step
            value = log_likelihood(candidate, X, y, offset, ridge)
            if np.isfinite(value) and value >= objective:
                break
            scale /= 2.0
        else:
            if np.isfinite(value) and np.max(np.abs(step)) < np.sqrt(tol):
                # already at the optimum up to rounding
                converged = True
                break
            raise FitDiverged('no step halving improved the log-likelihood', beta, iteration)
        change = value - objective
        moved = float(np.max(np.abs(scale * step)))
        beta, objective = candidate, value
        history.append(objective)
        logging.debug('newton iteration {}: log-likelihood {:.10f}, step {:.3g}'.format(iteration, objective, moved))
        if change < tol:
            if moved > SEPARATION_STEP:
                raise FitDiverged('log-likelihood is flat while coefficients keep growing (separation)',
                                  beta, iteration)
            converged = True
            break
    if not converged:
        logging.warning('odds model did not converge in {} iterations'.format(max_iter))
    model = OddsModel(beta=beta, baseline_sha=baseline_sha(baseline),
                      log_likelihood=log_likelihood(beta, X, y, offset), iterations=iteration,
                      converged=converged, ridge=ridge, history=tuple(history))
    logging.info('fitted odds model beta={} in {} iterations'.format(np.round(beta, 6).tolist(), iteration))
    return model


def _linear_predictor(model, covariates):
    covariates = np.asarray(covariates, dtype=float)
    if covariates.shape[-1] != len(model.beta):
        raise InvalidSpec('model has {} covariates, got {}'.format(len(model.beta), covariates.shape[-1]))
    return covariates @ model.beta


def _odds_hazards(h0, eta):
    # eta == 0 leaves the baseline untouched
    shifted = np.clip(expit(logit(h0) + eta), _LOWEST, _HIGHEST)
    return np.where(eta == 0, h0, shifted)


def predict_hazard_odds(model, covariates, baseline, t, pooling=None):
    h0 = _baseline_path(baseline, t, 1, pooling)[0]
    return float(_odds_hazards(h0, float(_linear_predictor(model, covariates))))


def odds_hazard_path(model, covariates, baseline, t0, horizon, pooling=None):
    h0 = _baseline_path(baseline, t0, horizon, pooling)
    return _odds_hazards(h0, float(_linear_predictor(model, covariates)))


def project_with_odds_model(model, covariates, baseline, t0, config=ProjectionConfig(), pooling=None):
    eta = float(_linear_predictor(model, covariates))
    path = odds_hazard_path(model, covariates, baseline, t0, config.max_horizon, pooling)
    survival, cut = truncate_survival(path, config)
    return CustomerProjection(alpha=Alpha(float(np.exp(eta))), hazard_path=path[:cut + 1],
                              survival_path=SurvivalCurve(values=survival), ert_months=float(survival.sum()),
                              truncated_at=cut)


def project_odds_batch(model, covariates, t0s, baseline, config=ProjectionConfig(), pooling=None):
    t0s = np.asarray(t0s, dtype=np.int64)
    if len(t0s) == 0:
        return BatchProjection(alpha=np.zeros(0), survival=np.zeros((0, config.max_horizon)),
                               truncated_at=np.zeros(0, dtype=np.int64))
    eta = _linear_predictor(model, np.asarray(covariates, dtype=float).reshape(len(t0s), -1))
    h0 = _baseline_path(baseline, 0, int(t0s.max()) + config.max_horizon, pooling)
    base = h0[t0s[:, None] + np.arange(config.max_horizon)[None, :]]
    survival, cut = truncate_survival_batch(_odds_hazards(base, eta[:, None]), config.eps)
    return BatchProjection(alpha=np.exp(eta), survival=survival, truncated_at=cut)


def model_to_dict(model):
    return {
        'version': MODEL_VERSION,
        'beta': [float(b) for b in model.beta],
        'ridge': model.ridge,
        'log_likelihood': model.log_likelihood,
        'iterations': model.iterations,
        'converged': model.converged,
        'baseline_sha': model.baseline_sha,
    }


def model_from_dict(doc):
    if doc.get('version') != MODEL_VERSION:
        raise UnsupportedVersion(doc.get('version'), 'odds model')
    missing = [k for k in ('beta', 'ridge', 'log_likelihood', 'iterations', 'converged', 'baseline_sha')
               if k not in doc]
    if missing:
        raise InvalidSpec('odds model document is missing {}'.format(missing))
    beta = np.array(doc['beta'], dtype=float)
    if len(beta) < 1 or not np.isfinite(beta).all():
        raise InvalidSpec('odds model beta must be a non-empty finite vector')
    return OddsModel(beta=beta, baseline_sha=doc['baseline_sha'], log_likelihood=doc['log_likelihood'],
                     iterations=doc['iterations'], converged=doc['converged'], ridge=doc['ridge'])


def save_model(model, path):
    with open(path, 'w') as f:
        json.dump(model_to_dict(model), f)
    logging.info('odds model written to {}'.format(path))


def load_model(path):
    with open(path) as f:
        return model_from_dict(json.load(f))
