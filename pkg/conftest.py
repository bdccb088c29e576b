import json
import os

import numpy as np
import pytest

import survival_core

HERE = os.path.dirname(os.path.abspath(__file__))
FIXTURE_BASELINE = os.path.join(HERE, 'static', 'fixture_baseline.json')


def counted_baseline(events, exposures, tail_start, smoothing='none', min_events=5):
    baseline = survival_core.baseline_from_counts(np.asarray(events), np.asarray(exposures),
                                                  survival_core.SmoothingConfig(smoothing), min_events)
    return survival_core.extrapolate_tail(baseline, tail_start)


def flat(h, tenures=12, exposure=1000):
    # h * exposure must be a whole number of churners
    events = int(round(h * exposure))
    return counted_baseline([events] * tenures, [exposure] * tenures, 0)


def write_csv(path, lines):
    with open(path, 'w', newline='') as f:
        f.write('\n'.join(lines) + '\n')
    return str(path)


def write_json(path, doc):
    with open(path, 'w') as f:
        json.dump(doc, f)
    return str(path)


@pytest.fixture
def fixture_baseline():
    return survival_core.load_baseline(FIXTURE_BASELINE)


@pytest.fixture
def fixture_path():
    return FIXTURE_BASELINE
