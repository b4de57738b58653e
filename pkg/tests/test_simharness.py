import numpy as np
import pytest

from tdoaspace.errors import NumericError, ValidationError
from tdoaspace.geometry import GroupKind, PairIndex, tdoa_map
from tdoaspace.removal import (ExplorationMode, IterationResult, PairStatistics, RemovalReport,
                               WorkCounters, preprocess_g1)
from tdoaspace.simharness import (ArrayPreset, TrialSpec, evaluate_trial, inject_noise,
                                  inject_outliers, position_rng, preset_array, run_campaign,
                                  run_trial, sample_source, trial_rng)
from tdoaspace.stattests import CovarianceModel, g2_acceptance_radius, g3_acceptance_radius

SIGMA = 0.007
ALPHA = 0.05
SOURCE = (1.2, -0.7, 0.5)


# Presets and sources

def test_linear_preset(linear7):
    assert linear7.count == 7
    assert np.allclose(linear7.positions[:, 0], [-0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3])
    assert np.all(linear7.positions[:, 1:] == 0.0)
    assert ArrayPreset.LINEAR7.planar


def test_cross_preset(cross7):
    assert cross7.count == 7
    assert np.all(cross7.positions[0] == 0.0)
    assert np.allclose(np.linalg.norm(cross7.positions[1:], axis=1), 0.3)
    assert not ArrayPreset.CROSS7.planar


def test_sample_source(linear7, cross7, rng):
    for _ in range(500):
        planar = sample_source(linear7, True, rng)
        assert planar[2] == 0.0
        assert np.linalg.norm(planar - linear7.centroid) <= 2.0
        spatial = sample_source(cross7, False, rng)
        assert np.linalg.norm(spatial - cross7.centroid) <= 2.0
        assert np.min(np.linalg.norm(cross7.positions - spatial, axis=1)) >= 0.01


def test_streams_are_keyed():
    a = trial_rng(11, 0, 0, 3).random(4)
    assert np.array_equal(a, trial_rng(11, 0, 0, 3).random(4))
    assert not np.array_equal(a, trial_rng(11, 0, 1, 3).random(4))
    assert not np.array_equal(a, trial_rng(12, 0, 0, 3).random(4))
    assert not np.array_equal(position_rng(11).random(4), position_rng(12).random(4))


# Noise and outliers

def test_noise_variance(cross7, rng):
    clean = tdoa_map(SOURCE, cross7)
    errors = []
    for _ in range(5000):
        noisy = inject_noise(clean, SIGMA, rng)
        errors.extend(noisy[p] - clean[p] for p in clean)
    errors = np.array(errors)
    assert errors.size == 105000
    assert abs(errors.mean()) < 5 * SIGMA / np.sqrt(errors.size)
    assert errors.var() == pytest.approx(SIGMA ** 2, rel=0.03)


def test_zero_noise_is_a_copy(cross7, rng):
    clean = tdoa_map(SOURCE, cross7)
    assert inject_noise(clean, 0.0, rng) == clean
    with pytest.raises(ValidationError):
        inject_noise(clean, -1.0, rng)


def test_outlier_properties(cross7, rng):
    clean = tdoa_map(SOURCE, cross7)
    gamma = SIGMA * g3_acceptance_radius(ALPHA)
    offset = SIGMA * g2_acceptance_radius(ALPHA)
    beyond_d = 0
    for _ in range(200):
        noisy = inject_noise(clean, SIGMA, rng)
        measured, truth = inject_outliers(noisy, clean, 5, SIGMA, ALPHA, rng, cross7)
        assert len(truth) == 5
        for pair in cross7.pairs():
            if pair in truth:
                d = cross7.distance(pair.j, pair.i)
                assert -d - offset <= measured[pair] <= d + offset
                assert abs(measured[pair] - clean[pair]) >= gamma
                beyond_d += abs(measured[pair]) > d
            else:
                assert measured[pair] == noisy[pair]
    # The acceptance margin beyond [-d, d] is part of the support
    assert beyond_d > 0


def test_outliers_pass_the_single_tdoa_test(cross7, rng):
    clean = tdoa_map(SOURCE, cross7)
    for _ in range(50):
        measured, _ = inject_outliers(clean, clean, 10, SIGMA, ALPHA, rng, cross7)
        _, removed = preprocess_g1(measured, cross7, CovarianceModel.isotropic(SIGMA), ALPHA)
        assert removed == []


def test_outlier_count_and_window_checks(cross7, rng):
    clean = tdoa_map(SOURCE, cross7)
    with pytest.raises(ValidationError):
        inject_outliers(clean, clean, 22, SIGMA, ALPHA, rng, cross7)
    with pytest.raises(NumericError):
        inject_outliers(clean, clean, 1, SIGMA, ALPHA, rng, cross7, exclusion=2.0)
    measured, truth = inject_outliers(clean, clean, 0, SIGMA, ALPHA, rng, cross7)
    assert measured == clean
    assert truth == frozenset()


# Trial metrics

def make_report(survivors, removed_per_iteration):
    iterations = []
    for removed in removed_per_iteration:
        stats = {p: PairStatistics(1e-6, 50.0, 5) for p in removed}
        iterations.append(IterationResult(False, tuple(removed), stats, (), 0, GroupKind.TRIPLE))
    iterations.append(IterationResult(True, (), {}, (), 0, GroupKind.TRIPLE))
    return RemovalReport([], iterations, survivors, [], 0, WorkCounters())


def test_evaluate_perfect_removal(cross7):
    clean = tdoa_map(SOURCE, cross7)
    outliers = [PairIndex(1, 0), PairIndex(3, 2), PairIndex(6, 4), PairIndex(5, 0), PairIndex(2, 1)]
    measured = clean.replaced({p: clean[p] + 0.1 for p in outliers})
    report = make_report(measured.without(outliers), [outliers[:2], outliers[2:]])

    result = evaluate_trial(report, frozenset(outliers), clean, measured)
    assert result.tpr == 1.0
    assert result.tnr == 1.0
    assert result.me_filtered == pytest.approx(0.0, abs=1e-15)
    assert result.me_raw == pytest.approx(5 * 0.1 / 21)
    assert result.removed_count == 5
    assert result.iterations == 3


def test_evaluate_nothing_removed(cross7):
    clean = tdoa_map(SOURCE, cross7)
    outliers = [PairIndex(1, 0), PairIndex(3, 2), PairIndex(6, 4), PairIndex(5, 0), PairIndex(2, 1)]
    measured = clean.replaced({p: clean[p] - 0.05 for p in outliers})
    result = evaluate_trial(make_report(measured, []), frozenset(outliers), clean, measured)
    assert result.tpr == 0.0
    assert result.tnr == 1.0
    assert result.me_filtered == pytest.approx(result.me_raw)


def test_evaluate_without_outliers_leaves_tpr_undefined(cross7):
    clean = tdoa_map(SOURCE, cross7)
    report = make_report(clean.without([PairIndex(2, 0)]), [[PairIndex(2, 0)]])
    result = evaluate_trial(report, frozenset(), clean, clean)
    assert result.tpr is None
    assert result.tnr == pytest.approx(20 / 21)


def test_trial_spec_validation():
    with pytest.raises(ValidationError):
        TrialSpec(SOURCE, 1, 0.0, ALPHA, (ExplorationMode.G3,), 0)
    with pytest.raises(ValidationError):
        TrialSpec(SOURCE, -1, SIGMA, ALPHA, (ExplorationMode.G3,), 0)


def test_modes_share_one_realization(cross7):
    spec = TrialSpec(SOURCE, 3, SIGMA, ALPHA, (ExplorationMode.G3, ExplorationMode.G2), seed=5)
    results = run_trial(spec, cross7)
    assert set(results) == {ExplorationMode.G3, ExplorationMode.G2}
    assert results[ExplorationMode.G3].me_raw == results[ExplorationMode.G2].me_raw


# Campaigns

CAMPAIGN = dict(z_values=[0, 2], runs=2, positions=2, sigma=SIGMA, alpha=ALPHA,
                modes=[ExplorationMode.G3, ExplorationMode.G2_THEN_G3], master_seed=7)


def test_campaign_is_reproducible(cross7):
    first = run_campaign(cross7, threads=1, **CAMPAIGN)
    assert first == run_campaign(cross7, threads=1, **CAMPAIGN)
    assert first == run_campaign(cross7, threads=2, **CAMPAIGN)
    assert [(r.mode, r.Z) for r in first] == [(m, z) for m in CAMPAIGN["modes"] for z in (0, 2)]
    assert all(r.trials == 4 for r in first)


def test_campaign_without_outliers(cross7):
    rows = run_campaign(cross7, threads=1, **CAMPAIGN)
    for row in rows:
        if row.Z == 0:
            assert row.mean_tpr is None
            assert row.se_tpr is None
            assert 0.0 <= row.mean_tnr <= 1.0
        else:
            assert 0.0 <= row.mean_tpr <= 1.0


def test_campaign_validation(cross7):
    with pytest.raises(ValidationError):
        run_campaign(cross7, [22], 1, 1, SIGMA, ALPHA, [ExplorationMode.G3], 0)
    with pytest.raises(ValidationError):
        run_campaign(cross7, [1], 0, 1, SIGMA, ALPHA, [ExplorationMode.G3], 0)


def test_campaign_detects_most_outliers(cross7):
    rows = run_campaign(cross7, [3], runs=5, positions=4, sigma=SIGMA, alpha=ALPHA,
                        modes=[ExplorationMode.G3], master_seed=2024, threads=1)
    assert rows[0].mean_tpr >= 0.75
    assert rows[0].mean_tnr >= 0.9
    assert rows[0].mean_me_filtered < rows[0].mean_me_raw


@pytest.mark.slow
def test_linear_array_desk_scale():
    rows = run_campaign(preset_array(ArrayPreset.LINEAR7), [0, 5], runs=100, positions=20,
                        sigma=SIGMA, alpha=ALPHA, modes=[ExplorationMode.G2_THEN_G3],
                        master_seed=1)
    by_z = {row.Z: row for row in rows}
    assert by_z[5].mean_tpr >= 0.93
    assert by_z[5].mean_tnr >= 0.97
    assert by_z[0].mean_tnr >= 0.95


@pytest.mark.slow
def test_shared_pair_tests_favor_linear_array():
    results = {}
    for preset in ArrayPreset:
        row, = run_campaign(preset_array(preset), [5], runs=25, positions=20, sigma=SIGMA,
                            alpha=ALPHA, modes=[ExplorationMode.G2], master_seed=3)
        results[preset] = row
    linear, cross = results[ArrayPreset.LINEAR7], results[ArrayPreset.CROSS7]
    assert cross.mean_tpr <= linear.mean_tpr + 2 * linear.se_tpr


@pytest.mark.slow
def test_filtering_lowers_mean_error(cross7):
    rows = run_campaign(cross7, [1, 3, 5], runs=50, positions=20, sigma=SIGMA, alpha=ALPHA,
                        modes=list(ExplorationMode), master_seed=11)
    for row in rows:
        assert row.trials == 1000
        assert row.mean_me_filtered <= row.mean_me_raw


@pytest.mark.slow
def test_mean_error_stays_flat_up_to_ten_outliers():
    z_values = [0, 2, 4, 6, 8, 10]
    modes = [ExplorationMode.G3, ExplorationMode.G2_THEN_G3, ExplorationMode.G3_THEN_G2]
    rows = run_campaign(preset_array(ArrayPreset.LINEAR7), z_values, runs=30, positions=20,
                        sigma=SIGMA, alpha=ALPHA, modes=modes, master_seed=1)
    for mode in modes:
        by_z = {row.Z: row for row in rows if row.mode is mode}
        baseline = by_z[0].mean_me_filtered
        for Z in z_values:
            assert by_z[Z].mean_me_filtered <= 2.0 * baseline, (mode, Z)
        assert by_z[10].mean_me_raw >= 5.0 * by_z[0].mean_me_raw
