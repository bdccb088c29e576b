import hashlib
import json
import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd

from errors import (EmptyCalibration, EmptyTail, InsufficientData, InvalidHazard, InvalidRecord,
                    InvalidSpec, InvalidSurvival, NotMonotone, TailNotSet, UnsupportedVersion)

BASELINE_VERSION = 1
SMOOTHING_METHODS = ('none', 'jeffreys')


@dataclass(frozen=True)
class SmoothingConfig:
    method: str = 'none'

    def __post_init__(self):
        if self.method not in SMOOTHING_METHODS:
            raise InvalidSpec('smoothing must be one of {}, got {!r}'.format(SMOOTHING_METHODS, self.method))

    def ratio(self, events, exposures):
        # works on scalars and arrays alike
        if self.method == 'jeffreys':
            return (events + 0.5) / (exposures + 1.0)
        return events / exposures


@dataclass(frozen=True)
class PoolingConfig:
    min_events: int = 5


@dataclass(frozen=True)
class TailConfig:
    window: int = 6
    rel_tol: float = 0.10


@dataclass(frozen=True)
class EventHistory:
    duration: int
    churned: bool


@dataclass(frozen=True, eq=False)
class BaselineHazard:
    """
    hazards[t] is the churn rate in the month after reaching tenure t (nan where nobody was observed).
    events/exposures are the integer counts behind them; tail_rate covers every t >= tail_start.
    """
    hazards: np.ndarray
    exposures: np.ndarray
    events: np.ndarray
    tail_start: Optional[int] = None
    tail_rate: Optional[float] = None
    smoothing: str = 'none'
    min_events: int = 5

    @property
    def t_max(self):
        return len(self.hazards) - 1

    @property
    def smoothing_config(self):
        return SmoothingConfig(self.smoothing)

    def observed(self):
        return np.flatnonzero(self.exposures > 0)


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    values: np.ndarray
    # kaplan-meier curves keep the event table they were multiplied out of
    at_risk: Optional[np.ndarray] = None
    events: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.values)

    def __getitem__(self, index):
        return self.values[index]


def _as_frame(records, columns):
    if isinstance(records, pd.DataFrame):
        missing = [c for c in columns if c not in records.columns]
        if missing:
            raise InvalidSpec('records are missing columns {}'.format(missing))
        return records[columns]
    return pd.DataFrame([{c: getattr(r, c) for c in columns} for r in records], columns=columns)


def _check_flags(flags):
    flags = np.asarray(flags)
    bad = ~np.isin(flags, (0, 1))
    if bad.any():
        raise InvalidRecord(int(np.flatnonzero(bad)[0]) + 1)
    return flags.astype(bool)


def _check_tenures(tenures, column='tenure'):
    tenures = np.asarray(tenures)
    as_float = pd.to_numeric(pd.Series(tenures), errors='coerce').to_numpy(dtype=float)
    bad = ~np.isfinite(as_float) | (as_float < 0) | (as_float != np.floor(as_float))
    if bad.any():
        raise InvalidRecord(int(np.flatnonzero(bad)[0]) + 1, '{} must be a non-negative integer'.format(column))
    return as_float.astype(np.int64)


def count_by_tenure(records):
    """
    input: calibration records (a DataFrame or objects with .tenure and .churned)
    output: (events, exposures) integer arrays indexed by tenure 0..T_max
    """
    frame = _as_frame(records, ['tenure', 'churned'])
    if frame.empty:
        raise EmptyCalibration()
    churned = _check_flags(frame['churned'].to_numpy())
    tenure = _check_tenures(frame['tenure'].to_numpy())
    exposures = np.bincount(tenure)
    events = np.bincount(tenure[churned], minlength=len(exposures))
    return events.astype(np.int64), exposures.astype(np.int64)


def merge_counts(*partials):
    # partition-and-merge of (events, exposures); integer sums so the order never matters
    if not partials:
        raise EmptyCalibration()
    size = max(len(ex) for _, ex in partials)
    events = np.zeros(size, dtype=np.int64)
    exposures = np.zeros(size, dtype=np.int64)
    for ev, ex in partials:
        events[:len(ev)] += ev
        exposures[:len(ex)] += ex
    return events, exposures


def baseline_from_counts(events, exposures, smoothing=SmoothingConfig(), min_events=5):
    events = np.asarray(events, dtype=np.int64)
    exposures = np.asarray(exposures, dtype=np.int64)
    if len(exposures) == 0 or exposures.sum() == 0:
        raise EmptyCalibration()
    if len(events) != len(exposures):
        raise InvalidSpec('events and exposures differ in length')
    too_many = np.flatnonzero((events > exposures) | (events < 0))
    if len(too_many):
        raise InvalidRecord(int(too_many[0]), 'more churn events than customers at tenure {}'.format(too_many[0]))
    observed = exposures > 0
    hazards = np.full(len(exposures), np.nan)
    hazards[observed] = smoothing.ratio(events[observed], exposures[observed])
    return BaselineHazard(hazards=hazards, exposures=exposures, events=events,
                          smoothing=smoothing.method, min_events=int(min_events))


def estimate_hazard_by_tenure(records, smoothing=SmoothingConfig(), min_events=5):
    events, exposures = count_by_tenure(records)
    baseline = baseline_from_counts(events, exposures, smoothing, min_events)
    logging.info('estimated hazards for tenures 0..{} from {} records'.format(baseline.t_max, exposures.sum()))
    return baseline


def kaplan_meier(histories):
    """
    Discrete product-limit estimate. S(t) = prod over u <= t of (1 - d_u / n_u), where n_u counts
    everyone with duration >= u (customers censored at u are still at risk at u).
    """
    frame = _as_frame(histories, ['duration', 'churned'])
    if frame.empty:
        raise EmptyCalibration('event histories')
    churned = _check_flags(frame['churned'].to_numpy())
    duration = _check_tenures(frame['duration'].to_numpy(), 'duration')
    leaving = np.bincount(duration)
    at_risk = leaving[::-1].cumsum()[::-1]
    events = np.bincount(duration[churned], minlength=len(leaving))
    values = np.cumprod(1.0 - events / at_risk)
    return SurvivalCurve(values=values, at_risk=at_risk.astype(np.int64), events=events.astype(np.int64))


def baseline_from_histories(histories, smoothing=SmoothingConfig(), min_events=5):
    curve = kaplan_meier(histories)
    return baseline_from_counts(curve.events, curve.at_risk, smoothing, min_events)


def survival_to_hazard(curve):
    if isinstance(curve, SurvivalCurve) and curve.events is not None:
        return curve.events / curve.at_risk
    values = np.asarray(curve.values if isinstance(curve, SurvivalCurve) else curve, dtype=float)
    outside = np.flatnonzero(~((values >= 0) & (values <= 1)))
    if len(outside):
        raise InvalidSurvival(int(outside[0]), values[outside[0]])
    previous = np.concatenate([[1.0], values[:-1]])
    rising = np.flatnonzero(values > previous)
    if len(rising):
        raise NotMonotone(int(rising[0]))
    hazards = np.ones(len(values))
    alive = previous > 0
    hazards[alive] = 1.0 - values[alive] / previous[alive]
    return hazards


def hazard_to_survival(hazards):
    hazards = np.asarray(hazards, dtype=float)
    bad = np.flatnonzero(~((hazards >= 0) & (hazards <= 1)))
    if len(bad):
        raise InvalidHazard(int(bad[0]), hazards[bad[0]])
    return SurvivalCurve(values=np.cumprod(1.0 - hazards))


def _window_mean(cum_events, cum_exposures, start, stop):
    exposure = cum_exposures[stop] - cum_exposures[start]
    if exposure == 0:
        return None
    return (cum_events[stop] - cum_events[start]) / exposure


def _exposure_quantile(exposures, q):
    share = np.cumsum(exposures) / exposures.sum()
    return int(np.flatnonzero(share >= q)[0])


def _agree(first, second, rel_tol):
    top = max(first, second)
    return top == 0 or abs(first - second) / top < rel_tol


def detect_tail_start(baseline, window=6, rel_tol=0.10):
    """
    Smallest t* whose next two windows of `window` tenures have exposure-weighted mean hazards
    within rel_tol of each other (relative to the larger one), and whose first window also agrees
    with the pooled rate over everything from t* on. Falls back to the tenure where cumulative
    exposure reaches 90%.
    """
    if window < 1:
        raise InvalidSpec('window must be >= 1')
    if len(baseline.observed()) < 2 * window:
        raise InsufficientData('need at least {} observed tenures to detect a tail, have {}'.format(
            2 * window, len(baseline.observed())))
    cum_events = np.concatenate([[0], np.cumsum(baseline.events)])
    cum_exposures = np.concatenate([[0], np.cumsum(baseline.exposures)])
    end = baseline.t_max + 1
    for start in range(0, end - 2 * window + 1):
        first = _window_mean(cum_events, cum_exposures, start, start + window)
        second = _window_mean(cum_events, cum_exposures, start + window, start + 2 * window)
        if first is None or second is None or not _agree(first, second, rel_tol):
            continue
        # a later level shift still shows up in the rate the tail would be given
        rest = _window_mean(cum_events, cum_exposures, start, end)
        if _agree(first, rest, rel_tol):
            logging.info('hazard stabilises from tenure {} ({:.6f} vs {:.6f}, tail {:.6f})'.format(
                start, first, second, rest))
            return start
    fallback = _exposure_quantile(baseline.exposures, 0.9)
    logging.warning('no stable hazard window found; tail starts at 90th percentile tenure {}'.format(fallback))
    return fallback


def extrapolate_tail(baseline, tail_start):
    if tail_start < 0:
        raise InvalidSpec('tail_start must be >= 0, got {}'.format(tail_start))
    if tail_start > baseline.t_max:
        raise EmptyTail(tail_start)
    events = baseline.events[tail_start:].sum()
    exposures = baseline.exposures[tail_start:].sum()
    if exposures == 0:
        raise EmptyTail(tail_start)
    tail_rate = float(baseline.smoothing_config.ratio(events, exposures))
    logging.info('tail from tenure {}: rate {:.6f} over {} customer-months'.format(tail_start, tail_rate, exposures))
    return replace(baseline, tail_start=int(tail_start), tail_rate=tail_rate)


def with_tail(baseline, tail_start=None, tail=TailConfig()):
    # explicit tail_start wins; otherwise detect it, falling back to the last observed tenure on thin data
    if tail_start is None:
        try:
            tail_start = detect_tail_start(baseline, tail.window, tail.rel_tol)
        except InsufficientData as err:
            tail_start = int(baseline.observed()[-1])
            logging.warning('{}; using last observed tenure {} as tail start'.format(err, tail_start))
    return extrapolate_tail(baseline, tail_start)


def with_smoothing(baseline, smoothing):
    rebuilt = baseline_from_counts(baseline.events, baseline.exposures, smoothing, baseline.min_events)
    if baseline.tail_start is None:
        return rebuilt
    return extrapolate_tail(rebuilt, baseline.tail_start)


def _pooling(baseline, pooling):
    return pooling if pooling is not None else PoolingConfig(baseline.min_events)


def pooling_radius(events, exposures, t, min_events):
    """
    How far the neighbourhood around tenure t widens until it holds at least min_events
    churners over some exposure. 0 means the bin stands on its own.
    """
    t_max = len(exposures) - 1
    num, den = int(events[t]), int(exposures[t])
    radius = 0
    while den == 0 or num < min_events:
        radius += 1
        lo, hi = t - radius, t + radius
        if lo < 0 and hi > t_max:
            logging.debug('pooling around tenure {} exhausted the observed range'.format(t))
            break
        if lo >= 0:
            num, den = num + int(events[lo]), den + int(exposures[lo])
        if hi <= t_max:
            num, den = num + int(events[hi]), den + int(exposures[hi])
    return radius


def pooling_guide(baseline_v, baseline_inv):
    """
    Whole-base counts of two cause baselines over common exposures, or None when their exposures
    differ. Both causes pool over the neighbourhood the total would use, so v + inv stays equal
    to the total at every tenure.
    """
    if not np.array_equal(baseline_v.exposures, baseline_inv.exposures):
        return None
    return BaselineHazard(hazards=baseline_v.hazards, exposures=baseline_v.exposures,
                          events=baseline_v.events + baseline_inv.events, min_events=baseline_v.min_events)


def hazard_parts(baseline, t, pooling=None, guide=None):
    """
    (numerator, denominator) counts behind hazard_at(baseline, t): the tail totals, the bin itself,
    or the pooled neighbourhood when the bin is empty or has fewer than min_events churners.
    A guide's counts, when given, decide the neighbourhood instead of the baseline's own.
    """
    if baseline.tail_rate is None:
        raise TailNotSet()
    if t < 0:
        raise InvalidSpec('tenure must be >= 0, got {}'.format(t))
    if t >= baseline.tail_start:
        return int(baseline.events[baseline.tail_start:].sum()), int(baseline.exposures[baseline.tail_start:].sum())
    source = guide if guide is not None else baseline
    radius = pooling_radius(source.events, source.exposures, t, _pooling(baseline, pooling).min_events)
    lo, hi = max(0, t - radius), t + radius + 1
    return int(baseline.events[lo:hi].sum()), int(baseline.exposures[lo:hi].sum())


def hazard_at(baseline, t, pooling=None, guide=None):
    if baseline.tail_rate is None:
        raise TailNotSet()
    if t >= baseline.tail_start:
        return baseline.tail_rate
    num, den = hazard_parts(baseline, t, pooling, guide)
    if den == 0:
        return baseline.tail_rate
    if num == baseline.events[t] and den == baseline.exposures[t]:
        return float(baseline.hazards[t])
    return float(baseline.smoothing_config.ratio(num, den))


def hazard_table(baseline, length, pooling=None, guide=None):
    # hazard_at for t = 0..length-1, the lookup every projection indexes into
    if baseline.tail_rate is None:
        raise TailNotSet()
    table = np.full(length, baseline.tail_rate, dtype=float)
    for t in range(min(length, baseline.tail_start)):
        table[t] = hazard_at(baseline, t, pooling, guide)
    return table


def parts_table(baseline, length, pooling=None, guide=None):
    """
    smoothed (numerator, denominator) arrays for t = 0..length-1, so sub-hazards that share
    denominators can be added before dividing
    """
    smoothing = baseline.smoothing_config
    num = np.zeros(length)
    den = np.zeros(length)
    for t in range(min(length, baseline.tail_start + 1)):
        n, d = hazard_parts(baseline, t, pooling, guide)
        num[t], den[t] = n, d
    if length > baseline.tail_start + 1:
        num[baseline.tail_start + 1:] = num[baseline.tail_start]
        den[baseline.tail_start + 1:] = den[baseline.tail_start]
    if smoothing.method == 'jeffreys':
        num, den = num + 0.5, den + 1.0
    return num, den


def baseline_to_dict(baseline):
    return {
        'version': BASELINE_VERSION,
        'hazards': [None if np.isnan(h) else float(h) for h in baseline.hazards],
        'exposures': [int(x) for x in baseline.exposures],
        'events': [int(x) for x in baseline.events],
        'tail_start': baseline.tail_start,
        'tail_rate': baseline.tail_rate,
        'smoothing': baseline.smoothing,
        'min_events': baseline.min_events,
    }


def baseline_from_dict(doc):
    if doc.get('version') != BASELINE_VERSION:
        raise UnsupportedVersion(doc.get('version'), 'baseline')
    for key in ('hazards', 'exposures', 'events', 'tail_start', 'tail_rate', 'smoothing'):
        if key not in doc:
            raise InvalidSpec('baseline document is missing {!r}'.format(key))
    hazards = np.array([np.nan if h is None else h for h in doc['hazards']], dtype=float)
    exposures = np.array(doc['exposures'], dtype=np.int64)
    events = np.array(doc['events'], dtype=np.int64)
    if not (len(hazards) == len(exposures) == len(events)):
        raise InvalidSpec('baseline arrays differ in length')
    present = ~np.isnan(hazards)
    if ((hazards[present] < 0) | (hazards[present] > 1)).any():
        bad = int(np.flatnonzero(present & ((hazards < 0) | (hazards > 1)))[0])
        raise InvalidHazard(bad, hazards[bad])
    if (events > exposures).any():
        raise InvalidSpec('baseline has more events than exposures at tenure {}'.format(
            int(np.flatnonzero(events > exposures)[0])))
    tail_rate = doc['tail_rate']
    if tail_rate is not None and not 0 <= tail_rate <= 1:
        raise InvalidHazard(doc['tail_start'], tail_rate)
    if doc['tail_start'] is not None and not 0 <= doc['tail_start'] <= len(hazards):
        raise InvalidSpec('tail_start {} outside 0..{}'.format(doc['tail_start'], len(hazards)))
    SmoothingConfig(doc['smoothing'])
    return BaselineHazard(hazards=hazards, exposures=exposures, events=events,
                          tail_start=doc['tail_start'], tail_rate=tail_rate,
                          smoothing=doc['smoothing'], min_events=int(doc.get('min_events', 5)))


def save_baseline(baseline, path):
    with open(path, 'w') as f:
        json.dump(baseline_to_dict(baseline), f)
    logging.info('baseline written to {}'.format(path))


def load_baseline(path):
    with open(path) as f:
        return baseline_from_dict(json.load(f))


def baseline_sha(baseline):
    canonical = json.dumps(baseline_to_dict(baseline), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
