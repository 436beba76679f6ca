from fractions import Fraction

import numpy as np
import pytest

from caliblab.calibration import (
    BiasLedger,
    CalibrationReport,
    Predictions,
    accumulate_run,
    block_decompose,
    check_bias_averaging,
    check_bits_mse,
    check_block_mass,
    check_block_parseval,
    check_diff_two,
    check_g4_context_decomp,
    check_l1_quantization,
    check_n_from_a,
    check_telescoping,
    deviation_stats,
    miss_count,
)
from caliblab.environments import (
    ContextRecord,
    sample_bernoulli_env,
    sample_bit_env,
    sample_rademacher_env,
)
from caliblab.groups import (
    ConstantGroup,
    build_bit_family,
    build_block_hadamard_family,
    build_block_layout,
    build_full_walsh_family,
    build_pred_threshold_family,
    build_walsh_family,
    default_eta,
)

HALF = Fraction(1, 2)


def honest_predictions(traj) -> Predictions:
    return Predictions(num=traj.x_num.copy(), den=traj.den)


def random_predictions(traj, rng, den=16) -> Predictions:
    return Predictions(num=rng.integers(0, den + 1, size=traj.T), den=den)


def test_record_round_examples():
    fam = build_pred_threshold_family(8, Fraction(1, 16))
    fam.groups.append(ConstantGroup())
    ledger = BiasLedger(fam)
    ctx = ContextRecord(mean=HALF)
    ledger.record_round(ctx, HALF, Fraction(1))
    assert ledger.bias("g_all", HALF) == Fraction(-1, 2)
    assert ledger.bias("g3@eta=1/16", HALF) == Fraction(-1, 2)
    assert ledger.bias("g1@eta=1/16", HALF) == 0
    assert ledger.bias("g2@eta=1/16", HALF) == 0
    ledger.record_round(ctx, HALF, Fraction(0))
    assert ledger.bias("g_all", HALF) == 0  # exact cancellation
    assert ledger.rounds_seen == 2


def test_record_round_validation():
    fam = build_pred_threshold_family(8, Fraction(1, 16))
    ledger = BiasLedger(fam)
    ctx = ContextRecord(mean=HALF)
    with pytest.raises(ValueError):
        ledger.record_round(ctx, Fraction(3, 2), Fraction(0))
    with pytest.raises(ValueError):
        ledger.record_round(ctx, HALF, Fraction(-1, 10))


def test_streaming_limit():
    _, fam = build_block_hadamard_family(T=256, K=2)
    with pytest.raises(ValueError):
        BiasLedger(fam)


def test_empty_report():
    fam = build_pred_threshold_family(8, Fraction(1, 16))
    rep = BiasLedger(fam).report()
    assert rep.mcerr == 0.0


def test_report_tiebreak_lexicographic():
    rep = CalibrationReport.from_err({"b": 1.0, "a": 1.0, "c": 0.5})
    assert rep.argmax_group == "a"


def test_honest_err_g1_g2_zero_exact():
    traj = sample_bernoulli_env(T=4000, m=10, seed=3)
    eta = default_eta(10, 4000)
    fam = build_pred_threshold_family(10, eta)
    run = accumulate_run(traj, honest_predictions(traj), fam)
    g1, g2, g3 = fam.ids()
    assert run.err_exact(g1) == 0
    assert run.err_exact(g2) == 0
    rep = run.report()
    assert rep.err[g1] == 0.0 and rep.err[g2] == 0.0
    assert rep.mcerr == rep.err[g3] > 0
    assert rep.argmax_group == g3


def test_streaming_matches_vectorized():
    rng = np.random.default_rng(12)
    traj = sample_bernoulli_env(T=200, m=8, seed=5)
    eta = Fraction(1, 16)
    fam = build_pred_threshold_family(8, eta)
    pred = random_predictions(traj, rng)
    ledger = BiasLedger(fam)
    for t in range(traj.T):
        ledger.record_round(traj.context(t), pred.fraction(t), traj.outcome(t))
    run = accumulate_run(traj, pred, fam)
    for gid in fam.ids():
        assert ledger.err_exact(gid) == run.err_exact(gid)
    # and bucketwise
    for b, frac in zip(run.bias[fam.ids()[0]], run.bucket_fractions()):
        assert Fraction(int(b), run.scale) == ledger.bias(fam.ids()[0], frac)


def test_streaming_matches_vectorized_walsh():
    rng = np.random.default_rng(13)
    traj = sample_rademacher_env(T=96, seed=6, m=4)
    fam = build_walsh_family(4)
    pred = random_predictions(traj, rng, den=8)
    ledger = BiasLedger(fam)
    for t in range(traj.T):
        ledger.record_round(traj.context(t), pred.fraction(t), traj.outcome(t))
    run = accumulate_run(traj, pred, fam)
    for gid in fam.ids():
        assert ledger.err_exact(gid) == run.err_exact(gid)


def test_block_groups_match_direct_evaluation():
    # FWHT-based block accumulation equals direct streaming on a small case
    rng = np.random.default_rng(14)
    traj = sample_rademacher_env(T=64, seed=7, m=4)
    layout, fam = build_block_hadamard_family(T=64, K=2)
    pred = random_predictions(traj, rng, den=4)
    ledger = BiasLedger(fam, streaming_limit=10_000)
    for t in range(traj.T):
        ledger.record_round(traj.context(t), pred.fraction(t), traj.outcome(t))
    run = accumulate_run(traj, pred, fam)
    for gid in fam.ids():
        assert ledger.err_exact(gid) == run.err_exact(gid), gid


def test_telescoping_exact():
    rng = np.random.default_rng(15)
    for seed in range(5):
        traj = sample_bernoulli_env(T=333, m=9, seed=seed)
        fam = build_pred_threshold_family(9, Fraction(1, 18))
        fam.groups.append(ConstantGroup())
        pred = random_predictions(traj, rng)
        run = accumulate_run(traj, pred, fam)
        chk = check_telescoping(run)
        assert chk.ok
        assert run.telescoped() == sum(
            (pred.fraction(t) - traj.outcome(t) for t in range(traj.T)), Fraction(0)
        )


def test_deviation_stats_honest():
    traj = sample_bernoulli_env(T=100, m=8, seed=1)
    stats = deviation_stats(traj, honest_predictions(traj), eta=Fraction(1, 16))
    assert stats.A == 0
    assert stats.S == 0.0
    counts = traj.context_counts()
    assert stats.N == pytest.approx(np.sqrt(counts).sum())
    # honest rounds everywhere: R_x = 0, N_x free
    assert np.all(stats.R_x_num == 0)
    assert np.array_equal(stats.honest_counts, counts)


def test_deviation_stats_constant_predictor():
    traj = sample_bernoulli_env(T=100, m=8, seed=2)
    pred = Predictions(num=np.full(100, 1, dtype=np.int64), den=2)
    stats = deviation_stats(traj, pred)
    assert len(stats.n_v) == 1
    assert stats.N == pytest.approx(np.sqrt(100))


def test_l1_quantization_on_random_sequences():
    # exercised on the time-augmented grid environment, its native scope
    rng = np.random.default_rng(16)
    traj = sample_rademacher_env(T=256, seed=8, m=8)
    for _ in range(100):
        pred = random_predictions(traj, rng, den=32)
        stats = deviation_stats(traj, pred)
        assert check_l1_quantization(stats, m=8).ok
        assert check_n_from_a(stats, m=8).ok


def test_norm_interpolation():
    rng = np.random.default_rng(17)
    for _ in range(200):
        a = np.abs(rng.standard_normal(rng.integers(1, 40)))
        a /= np.sqrt((a**2).sum())
        l1 = a.sum()
        l4 = (a**4).sum() ** 0.25
        assert l1 >= l4**-2 - 1e-12


def test_block_mass_inequalities():
    rng = np.random.default_rng(18)
    traj = sample_rademacher_env(T=512, seed=9, m=8)
    layout = build_block_layout(512, 4)
    for _ in range(20):
        pred = random_predictions(traj, rng, den=16)
        stats = deviation_stats(traj, pred, layout=layout)
        for chk in check_block_mass(stats):
            assert chk.ok


def test_block_decompose_honest():
    traj = sample_rademacher_env(T=128, seed=10, m=4)
    layout = build_block_layout(128, 2)
    pred = honest_predictions(traj)
    dec = block_decompose(traj, pred, layout)
    for a in (1, 2):
        _, d = dec.D[a]
        assert np.all(d == 0)
        _, z = dec.Nz[a]
        assert dec.signed_err(a, 3) == Fraction(int(np.abs(z[:, 3]).sum()), dec.scale)


def test_block_decompose_constant_bias():
    # single bucket across a full block: all bias mass lands on j=0
    traj = sample_rademacher_env(T=64, seed=11, m=2)
    layout = build_block_layout(64, 1)
    pred = Predictions(num=np.full(64, 5, dtype=np.int64), den=8)
    dec = block_decompose(traj, pred, layout)
    buckets, d = dec.D[1]
    assert len(buckets) == 1
    delta = (
        np.full(64, 5 * dec.scale // 8, dtype=np.int64)
        - traj.x_num * (dec.scale // traj.den)
    )
    assert d[0, 0] == delta.sum()


def test_block_decompose_identity_and_parseval():
    rng = np.random.default_rng(19)
    traj = sample_rademacher_env(T=256, seed=12, m=4)
    layout = build_block_layout(256, 2)
    _, fam = build_block_hadamard_family(T=256, K=2)
    for _ in range(5):
        pred = random_predictions(traj, rng, den=8)
        dec = block_decompose(traj, pred, layout)
        run = accumulate_run(traj, pred, fam)
        stats = deviation_stats(traj, pred, layout=layout)
        # D + Nz equals the signed ledger bias exactly
        for a in (1, 2):
            for j in (0, 1, layout.L - 1):
                lhs = dec.signed_err(a, j)
                rhs = Fraction(run.block_coeff_abs[(a, j)], run.scale)
                assert lhs == rhs
        assert check_block_parseval(dec, stats).ok
        for chk in check_bias_averaging(dec, stats):
            assert chk.ok


def test_g4_context_decomposition():
    rng = np.random.default_rng(20)
    m = 8
    eta = Fraction(1, 16)
    traj = sample_bernoulli_env(T=400, m=m, seed=13)
    fam = build_pred_threshold_family(m, eta)
    for _ in range(20):
        pred = random_predictions(traj, rng, den=64)
        run = accumulate_run(traj, pred, fam)
        stats = deviation_stats(traj, pred, eta=eta)
        assert check_g4_context_decomp(run, stats, eta, m).ok


def test_diff_two_pathwise():
    rng = np.random.default_rng(21)
    traj = sample_rademacher_env(T=128, seed=14, m=4)
    _, fam = build_full_walsh_family(T=128, m=4, K=2)
    for _ in range(10):
        pred = random_predictions(traj, rng, den=8)
        run = accumulate_run(traj, pred, fam)
        checks = check_diff_two(run)
        assert len(checks) > 0
        assert all(c.ok for c in checks)


def test_bits_mse_checks():
    rng = np.random.default_rng(22)
    traj = sample_bit_env(T=500, k=3, seed=15)
    fam = build_bit_family(3)
    pred = random_predictions(traj, rng, den=7)
    run = accumulate_run(traj, pred, fam)
    for chk in check_bits_mse(traj, pred, run.report()):
        assert chk.ok
    assert 0 <= miss_count(traj, pred) <= traj.T
    # honest predictions never miss and have zero loss
    honest = honest_predictions(traj)
    assert miss_count(traj, honest) == 0


def test_report_csv(tmp_path):
    rep = CalibrationReport.from_err({"g": 0.125, "h": 1.0 / 3.0})
    path = tmp_path / "r.csv"
    rep.write_csv(path)
    text = path.read_text()
    assert text.splitlines()[0] == "group_id,err"
    assert "0.125" in text and "0.33333333333333331" in text


def test_decomposition_csv(tmp_path):
    traj = sample_rademacher_env(T=32, seed=20, m=2)
    layout = build_block_layout(32, 2)
    pred = honest_predictions(traj)
    dec = block_decompose(traj, pred, layout)
    path = tmp_path / "dec.csv"
    dec.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "block,j,bucket_value,D,Nz"
    # 2 blocks x 2 realized buckets x L columns
    assert len(lines) == 1 + 2 * 2 * layout.L
