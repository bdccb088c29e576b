import numpy as np
import pytest

import proportional as pr
import survival_core as sc
from conftest import counted_baseline, flat
from errors import DegenerateBaseline, InvalidSpec

EXPOSURES = [1000] * 30
EVENTS_V = [40, 36, 33, 30, 28, 26, 24, 22, 21, 20] + [18] * 20
EVENTS_INV = [20, 18, 16, 15, 14, 13, 12, 11, 10, 10] + [9] * 20


def competing_baselines():
    total = [v + i for v, i in zip(EVENTS_V, EVENTS_INV)]
    return (counted_baseline(EVENTS_V, EXPOSURES, 10), counted_baseline(EVENTS_INV, EXPOSURES, 10),
            counted_baseline(total, EXPOSURES, 10))


def test_compute_alpha():
    baseline = flat(0.01)
    assert pr.compute_alpha(0.013, baseline, 4).value == pytest.approx(1.3, rel=1e-12)
    assert pr.compute_alpha(0.01, baseline, 4).value == 1.0
    assert pr.compute_alpha(0.0, baseline, 4).value == 0.0


def test_alpha_is_linear_in_score(fixture_baseline):
    for score in (0.01, 0.0231, 0.4):
        single = pr.compute_alpha(score, fixture_baseline, 7).value
        assert pr.compute_alpha(2 * score, fixture_baseline, 7).value == 2 * single


def test_degenerate_baseline():
    baseline = counted_baseline([0] * 5, [100] * 5, 0)
    with pytest.raises(DegenerateBaseline):
        pr.compute_alpha(0.1, baseline, 2)
    assert pr.compute_alpha(0.0, baseline, 2).value == 0.0


def test_score_out_of_range():
    with pytest.raises(InvalidSpec):
        pr.compute_alpha(1.2, flat(0.1), 0)


def test_unit_alpha_follows_baseline(fixture_baseline):
    path = pr.project_hazard(pr.Alpha(1.0), fixture_baseline, 18, 30)
    assert np.array_equal(path, sc.hazard_table(fixture_baseline, 48)[18:])


def test_scaled_path(fixture_baseline):
    path = pr.project_hazard(pr.Alpha(1.3), fixture_baseline, 18, 24)
    assert np.array_equal(path, 1.3 * sc.hazard_table(fixture_baseline, 42)[18:])


def test_clipping_at_one():
    baseline = counted_baseline([300, 100, 300, 50], [1000] * 4, 3)
    path = pr.project_hazard(pr.Alpha(5.0), baseline, 0, 6)
    assert path[0] == 1.0 and path[2] == 1.0
    assert path[1] == 0.5
    ert, survival, cut = pr.expected_remaining_tenure(pr.Alpha(5.0), baseline, 0)
    assert survival.values[0] == 0.0
    assert ert == 0.0 and cut == 0
    # from tenure 1 the path clips one month later
    ert, survival, cut = pr.expected_remaining_tenure(pr.Alpha(5.0), baseline, 1)
    assert survival.values.tolist() == [0.5, 0.0]


def test_score_passes_through(fixture_baseline):
    projection = pr.project_customer(0.0273, fixture_baseline, 18)
    assert projection.hazard_path[0] == 0.0273
    projection = pr.project_customer(0.0317, fixture_baseline, 5)
    assert projection.hazard_path[0] == 0.0317


@pytest.mark.parametrize('h,expected,tol', [(0.5, 1.0, 1e-4), (0.1, 9.0, 1e-3)])
def test_constant_hazard_ert(h, expected, tol):
    ert, survival, cut = pr.expected_remaining_tenure(pr.Alpha(1.0), flat(h), 3)
    assert ert == pytest.approx(expected, abs=tol)
    assert survival.values[-1] < 1e-6
    assert ert == pytest.approx(survival.values.sum(), abs=1e-9)


def test_zero_alpha_runs_to_max_horizon(fixture_baseline):
    ert, survival, cut = pr.expected_remaining_tenure(pr.Alpha(0.0), fixture_baseline, 3)
    assert ert == 1200.0
    assert cut == 1199
    ert, _, cut = pr.expected_remaining_tenure(pr.Alpha(0.0), fixture_baseline, 3, pr.ProjectionConfig(max_horizon=60))
    assert ert == 60.0 and cut == 59


def test_ert_decreases_with_alpha(fixture_baseline):
    erts = [pr.expected_remaining_tenure(pr.Alpha(a), fixture_baseline, 5)[0] for a in (0.5, 1.0, 1.5, 2.0, 3.0)]
    assert all(np.diff(erts) < 0)


def test_ert_bounds(fixture_baseline):
    for score in (0.001, 0.03, 0.5):
        projection = pr.project_customer(score, fixture_baseline, 10)
        assert projection.ert_months <= projection.truncated_at + 1
        assert projection.ert_months >= projection.survival_path.values[0]
        assert (np.diff(projection.survival_path.values) <= 0).all()


def test_projection_config_validated():
    with pytest.raises(InvalidSpec):
        pr.ProjectionConfig(eps=0)
    with pytest.raises(InvalidSpec):
        pr.ProjectionConfig(max_horizon=0)


def test_competing_with_vanishing_second_risk():
    baseline_v = counted_baseline(EVENTS_V, EXPOSURES, 10)
    baseline_inv = counted_baseline([0] * 30, EXPOSURES, 10)
    competing = pr.project_competing(0.03, 0.0, baseline_v, baseline_inv, 6)
    single = pr.project_customer(0.03, baseline_v, 6)
    assert np.array_equal(competing.hazard_path, single.hazard_path)
    assert competing.ert_months == single.ert_months
    assert competing.alpha_inv.value == 0.0


def test_sub_hazards_add_up_to_total():
    baseline_v, baseline_inv, total = competing_baselines()
    for t0 in (0, 4, 9, 10, 25):
        path = pr.combined_hazard_path(pr.Alpha(1.0), pr.Alpha(1.0), baseline_v, baseline_inv, t0, 40)
        assert np.array_equal(path, sc.hazard_table(total, t0 + 40)[t0:])


@pytest.mark.parametrize('events_v,events_inv', [
    ([10] * 30, [1, 9, 3, 0, 2, 7, 1, 0, 4, 6] + [1] * 20),
    ([2] * 30, [1, 0, 2] * 10),
])
def test_sparse_cause_pools_like_total(events_v, events_inv):
    baseline_v = counted_baseline(events_v, EXPOSURES, 20)
    baseline_inv = counted_baseline(events_inv, EXPOSURES, 20)
    total = counted_baseline([v + i for v, i in zip(events_v, events_inv)], EXPOSURES, 20)
    for t0 in (0, 1, 2, 7, 19, 20):
        path = pr.combined_hazard_path(pr.Alpha(1.0), pr.Alpha(1.0), baseline_v, baseline_inv, t0, 40)
        assert np.array_equal(path, sc.hazard_table(total, t0 + 40)[t0:])
    guide = sc.pooling_guide(baseline_v, baseline_inv)
    table_v = sc.hazard_table(baseline_v, 25, guide=guide)
    table_inv = sc.hazard_table(baseline_inv, 25, guide=guide)
    # a zero cause score means alpha 0 for that cause, which no longer follows the total
    t0s = np.flatnonzero((table_v > 0) & (table_inv > 0))
    scores_v, scores_inv = table_v[t0s], table_inv[t0s]
    config = pr.ProjectionConfig(max_horizon=200)
    competing = pr.project_competing_batch(scores_v, scores_inv, t0s, baseline_v, baseline_inv, config)
    np.testing.assert_allclose(competing.ert, pr.project_batch(sc.hazard_table(total, 25), t0s, total, config).ert,
                               rtol=1e-12)


def test_pooling_guide_needs_common_exposures():
    baseline_v = counted_baseline([10] * 30, EXPOSURES, 20)
    baseline_inv = counted_baseline([1] * 30, [900] * 30, 20)
    assert sc.pooling_guide(baseline_v, baseline_inv) is None
    assert sc.pooling_guide(baseline_v, baseline_v).events.tolist() == [20] * 30


def test_competing_batch_matches_total():
    baseline_v, baseline_inv, total = competing_baselines()
    t0s = np.array([0, 3, 9, 12, 29])
    scores_v = sc.hazard_table(baseline_v, 30)[t0s]
    scores_inv = sc.hazard_table(baseline_inv, 30)[t0s]
    config = pr.ProjectionConfig(max_horizon=300)
    competing = pr.project_competing_batch(scores_v, scores_inv, t0s, baseline_v, baseline_inv, config)
    single = pr.project_batch(sc.hazard_table(total, 30)[t0s], t0s, total, config)
    assert competing.alpha.tolist() == [1.0] * 5
    assert np.array_equal(competing.survival, single.survival)


def test_competing_clips_the_sum():
    baseline_v, baseline_inv, _ = competing_baselines()
    path = pr.combined_hazard_path(pr.Alpha(20.0), pr.Alpha(20.0), baseline_v, baseline_inv, 0, 5)
    assert path[0] == 1.0
    assert (path <= 1.0).all()


def test_summed_scores_use_whole_base():
    _, _, total = competing_baselines()
    summed = pr.project_summed(0.02, 0.01, total, 5)
    assert summed.ert_months == pr.project_customer(0.02 + 0.01, total, 5).ert_months


def test_batch_matches_single_customers(fixture_baseline):
    scores = np.array([0.0, 0.01, 0.05, 0.3, 0.0212])
    t0s = np.array([0, 18, 3, 30, 40])
    batch = pr.project_batch(scores, t0s, fixture_baseline)
    for i in range(len(scores)):
        projection = pr.project_customer(scores[i], fixture_baseline, t0s[i])
        assert batch.alpha[i] == projection.alpha.value
        assert batch.truncated_at[i] == projection.truncated_at
        assert batch.ert[i] == pytest.approx(projection.ert_months, rel=1e-12)


def test_batch_partition_does_not_matter(fixture_baseline):
    rng = np.random.default_rng(2)
    scores = rng.uniform(0, 0.2, 40)
    t0s = rng.integers(0, 50, 40)
    whole = pr.project_batch(scores, t0s, fixture_baseline)
    halves = [pr.project_batch(scores[s], t0s[s], fixture_baseline) for s in (slice(0, 17), slice(17, 40))]
    assert np.array_equal(whole.ert, np.concatenate([h.ert for h in halves]))
    assert np.array_equal(whole.truncated_at, np.concatenate([h.truncated_at for h in halves]))


def test_batch_names_degenerate_customer():
    baseline = counted_baseline([0] * 5, [100] * 5, 0)
    with pytest.raises(DegenerateBaseline) as err:
        pr.project_batch([0.0, 0.2], [1, 2], baseline, ids=np.array(['a', 'b']))
    assert err.value.customer_id == 'b'
