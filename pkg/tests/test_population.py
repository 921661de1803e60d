import math

import numpy as np
import pytest

from potts_recon import BracketNotFound, ChannelParams, InvalidParameters
from potts_recon.exact_oracle import exact_moments
from potts_recon.population import (LevelRecord, PopulationPool, Verdict, _spin_thresholds,
                                    auto_batches, check_zx_ratio, classify, estimate_threshold,
                                    evolve_pool, run_trajectory)


def test_level0_pool():
    pool = PopulationPool.level0(3, 10_000, 1)
    x, se, z, sez, p = pool.moments()
    assert x == pytest.approx(2 / 3) and se < 1e-15 and p == 1.0


def test_pool_rejects_bad_batching():
    with pytest.raises(InvalidParameters):
        PopulationPool(np.zeros((10, 3)), 0, 0, n_batches=3)


def test_small_pool_rejected():
    with pytest.raises(InvalidParameters):
        run_trajectory(ChannelParams(3, 2, 0.3), 5000, 2)
    tr = run_trajectory(ChannelParams(3, 2, 0.3), 1000, 2, allow_small_pool=True, n_batches=10)
    assert len(tr.records) == 3


def test_auto_batches():
    assert auto_batches(100_000, 2) == 50
    assert auto_batches(100_000, 100) == 5
    assert auto_batches(20_000, 400) == 1
    assert auto_batches(99_991, 2) == 1  # prime pool size


def test_spin_thresholds_follow_first_row():
    params = ChannelParams(4, 2, 0.4)
    thr = _spin_thresholds(params)
    M0 = np.array([0.55, 0.15, 0.15, 0.15])
    assert np.allclose(thr / 2.0**32, np.cumsum(M0)[:-1], atol=1e-9)


def test_zero_coupling_is_uniform():
    tr = run_trajectory(ChannelParams(3, 3, 0.0), 10_000, 2, early_stop=False)
    assert tr.records[1].x == pytest.approx(0, abs=1e-14)
    assert tr.records[1].p == pytest.approx(1 / 3)


def test_pool_rows_normalised():
    params = ChannelParams(4, 3, -0.3)
    pool = evolve_pool(params, PopulationPool.level0(4, 10_000, 3))
    assert np.allclose(pool.samples.sum(axis=1), 1.0)
    assert np.all(pool.samples >= 0)


def test_level1_matches_exact_within_noise():
    params = ChannelParams(3, 2, 0.5)
    tr = run_trajectory(params, 100_000, 2, seed=5, early_stop=False)
    ex = exact_moments(params, 2)
    for r, e in zip(tr.records[1:], ex[1:]):
        assert abs(r.x - e.x_n) <= 4 * r.se_x
        assert abs(r.z - e.z_n) <= 4 * r.se_z


def test_tail_spins_exchangeable():
    # the non-root coordinates must have equal means even at large d lambda
    params = ChannelParams(3, 20, 0.3)
    pool = PopulationPool.level0(3, 20_000, 9, n_batches=1)
    for _ in range(15):
        pool = evolve_pool(params, pool)
    m = pool.samples.mean(axis=0)
    assert abs(m[1] - m[2]) < 0.02


def test_thread_count_does_not_change_bits():
    params = ChannelParams(3, 5, 0.5)
    a = run_trajectory(params, 10_240, 5, seed=3, threads=1, early_stop=False)
    b = run_trajectory(params, 10_240, 5, seed=3, threads=3, early_stop=False)
    assert a.to_csv() == b.to_csv()


def test_seed_changes_output():
    params = ChannelParams(3, 5, 0.5)
    a = run_trajectory(params, 10_000, 2, seed=3, early_stop=False)
    b = run_trajectory(params, 10_000, 2, seed=4, early_stop=False)
    assert a.to_csv() != b.to_csv()


def test_csv_layout():
    tr = run_trajectory(ChannelParams(3, 2, 0.3), 10_000, 2, seed=1, early_stop=False)
    lines = tr.to_csv().splitlines()
    assert lines[0].startswith("# {") and '"schema": 1' in lines[0]
    assert lines[1] == "n,x,se_x,z,se_z,p"
    assert len(lines) == 5


def _recs(xs, se=1e-4):
    return [LevelRecord(n, x, se, x / 3, se, 1 / 3 + x) for n, x in enumerate(xs)]


def test_classify_rules():
    assert classify(_recs([1.0] + [1e-6] * 25)) is Verdict.NON_RECONSTRUCTION
    assert classify(_recs([1.0] + [0.2] * 120)) is Verdict.RECONSTRUCTION
    assert classify(_recs([1.0] + [0.2] * 30)) is Verdict.UNDECIDED
    drifting = [1.0] + list(np.linspace(0.5, 0.1, 120))
    assert classify(_recs(drifting)) is Verdict.UNDECIDED


def test_ks_regimes():
    strong = run_trajectory(ChannelParams(3, 4, 0.6), 20_000, 500, seed=2)
    weak = run_trajectory(ChannelParams(3, 4, 0.1), 20_000, 500, seed=2)
    assert strong.verdict is Verdict.RECONSTRUCTION
    assert weak.verdict is Verdict.NON_RECONSTRUCTION


def test_threshold_small_d():
    # q=3, d=4: threshold sits close to the KS value 1/2
    est = estimate_threshold(3, 4, "ferro", tol=0.01, pool_size=10_000, seed=1)
    assert est.plus.lo < est.plus.hi <= est.plus.lo + 0.01 + 1e-12
    assert 0.4 < est.plus.mid < 0.55
    js = est.to_json()
    assert js["schema"] == 1 and js["side"] == "ferro"


def test_threshold_antiferro_sign():
    est = estimate_threshold(3, 5, "antiferro", tol=0.01, pool_size=10_000, seed=1)
    assert est.minus.hi < 0 and est.lambda_minus_lo < est.lambda_minus_hi


def test_threshold_argument_checks():
    with pytest.raises(InvalidParameters):
        estimate_threshold(3, 4, "sideways")
    with pytest.raises(InvalidParameters):
        estimate_threshold(3, 4, tol=1e-4)


def test_bracket_not_found():
    # q=3, d=2 antiferro: the whole range down to -1/2 stays below KS
    with pytest.raises(BracketNotFound):
        estimate_threshold(3, 2, "antiferro", tol=0.1, pool_size=10_000)


def test_zx_report_counts_only_resolved_levels():
    tr = run_trajectory(ChannelParams(3, 4, 0.3), 20_000, 40, seed=1, early_stop=False)
    rep = check_zx_ratio(tr, cutoff=0.02)
    for c in rep.checks:
        n = int(c.identity.rsplit("=", 1)[1])
        r = tr.records[n]
        assert 10 * r.se_x < r.x < 0.02
    assert math.isfinite(rep.info["qualifying_levels"])
