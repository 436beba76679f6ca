"""Bias ledgers, Err/MCerr reports, deviation statistics, block decompositions.

Biases accumulate exactly.  The streaming ledger works in Fractions; the
vectorized run accumulator works in integer numerators over one common
scale, which stays exact because every partial sum is bounded well below
2^53 (asserted).  Reports convert to float64 only at the end, so an
exactly-zero calibration error is reported as exactly 0.0.

Signed functionals (differences of two half-groups) are measured from
the signed weights directly, never by subtracting two separately rounded
reports, so the bias + noise = ledger-bias identity is exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .environments import ContextRecord, Trajectory
from .groups import (
    BlockHadamardHalfGroup,
    BlockLayout,
    GroupFamily,
    ThresholdGroup,
)
from .orthogonal import fwht

STREAMING_FAMILY_LIMIT = 64

_EXACT_SUM_LIMIT = 2**53


@dataclass
class Predictions:
    """A run's prediction sequence: integer numerators over one denominator."""

    num: np.ndarray
    den: int

    def __post_init__(self):
        self.num = np.asarray(self.num, dtype=np.int64)
        if self.den < 1:
            raise ValueError("denominator must be positive")
        if self.num.min(initial=0) < 0 or self.num.max(initial=0) > self.den:
            raise ValueError("predictions must lie in [0, 1]")

    @property
    def T(self) -> int:
        return int(self.num.shape[0])

    def fraction(self, t: int) -> Fraction:
        return Fraction(int(self.num[t]), self.den)

    @classmethod
    def from_fractions(cls, values) -> "Predictions":
        values = [Fraction(v) for v in values]
        den = math.lcm(*(v.denominator for v in values)) if values else 1
        num = np.array([v.numerator * (den // v.denominator) for v in values], dtype=np.int64)
        return cls(num=num, den=den)


def _check_unit_interval(value: Fraction, what: str) -> Fraction:
    value = Fraction(value)
    if not 0 <= value <= 1:
        raise ValueError(f"{what} must lie in [0, 1], got {value}")
    return value


@dataclass
class CalibrationReport:
    """Per-group Err and their maximum; argmax ties break on group id."""

    err: dict
    mcerr: float
    argmax_group: Optional[str]

    @classmethod
    def from_err(cls, err: dict) -> "CalibrationReport":
        if not err:
            return cls(err={}, mcerr=0.0, argmax_group=None)
        mcerr = max(err.values())
        best = min(gid for gid, e in err.items() if e == mcerr)
        return cls(err=err, mcerr=mcerr, argmax_group=best)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group_id", "err"])
            for gid in sorted(self.err):
                w.writerow([gid, format_float(self.err[gid])])


def format_float(x: float) -> str:
    return f"{x:.17g}"


class BiasLedger:
    """Streaming exact ledger for families below the size threshold.

    Entries exist only for realized prediction values; each maps
    (group id, prediction) to the accumulated bias as a Fraction.
    """

    def __init__(self, family: GroupFamily, streaming_limit: int = STREAMING_FAMILY_LIMIT):
        if len(family) > streaming_limit:
            raise ValueError(
                f"family of size {len(family)} exceeds the streaming limit "
                f"{streaming_limit}; accumulate post hoc with accumulate_run"
            )
        self.family = family
        self.entries: dict = {}
        self.rounds_seen = 0

    def record_round(self, ctx: ContextRecord, p: Fraction, y: Fraction) -> None:
        p = _check_unit_interval(p, "prediction")
        y = _check_unit_interval(y, "outcome")
        resid = p - y
        for g in self.family:
            w = g.evaluate(ctx, p)
            if w:
                key = (g.id, p)
                self.entries[key] = self.entries.get(key, Fraction(0)) + w * resid
        self.rounds_seen += 1

    def bias(self, gid: str, p: Fraction) -> Fraction:
        return self.entries.get((gid, Fraction(p)), Fraction(0))

    def err_exact(self, gid: str) -> Fraction:
        return sum((abs(b) for (g, _), b in self.entries.items() if g == gid), Fraction(0))

    def telescoped(self, gid: str = "g_all") -> Fraction:
        return sum((b for (g, _), b in self.entries.items() if g == gid), Fraction(0))

    def report(self) -> CalibrationReport:
        err = {g.id: float(self.err_exact(g.id)) for g in self.family}
        return CalibrationReport.from_err(err)


def common_scale(traj: Trajectory, pred: Predictions, family: Optional[GroupFamily] = None) -> int:
    dens = [traj.den, pred.den]
    if family is not None:
        dens.extend(family.required_denominators())
    scale = math.lcm(*dens)
    if 4 * traj.T * scale >= _EXACT_SUM_LIMIT:
        raise ValueError(
            f"scaled accumulation would overflow exact float range: T={traj.T}, scale={scale}"
        )
    return scale


def _exact_bincount(idx: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    # float64 bincount is exact here: all partial sums are < 2^53 by the
    # common_scale guard
    out = np.bincount(idx, weights=values.astype(np.float64), minlength=n)
    return np.rint(out).astype(np.int64)


@dataclass
class RunLedger:
    """Exact per-(group, bucket) biases for one run, vectorized.

    Direct groups carry an int64 bias vector over the realized buckets
    (numerators over ``scale``).  Blockwise Hadamard half-groups are
    evaluated collectively through the transform; their Err numerators
    live in ``block_abs`` over ``2 * scale``.
    """

    family: GroupFamily
    scale: int
    bucket_scaled: np.ndarray
    bucket_idx: np.ndarray
    resid: np.ndarray
    bias: dict
    block_plus_abs: dict
    block_minus_abs: dict
    block_coeff_abs: dict
    T: int

    def bucket_fractions(self) -> list[Fraction]:
        return [Fraction(int(v), self.scale) for v in self.bucket_scaled]

    def err_exact(self, gid: str) -> Fraction:
        if gid in self.bias:
            return Fraction(int(np.abs(self.bias[gid]).sum()), self.scale)
        if gid in self.block_plus_abs:
            return Fraction(int(self.block_plus_abs[gid]), 2 * self.scale)
        if gid in self.block_minus_abs:
            return Fraction(int(self.block_minus_abs[gid]), 2 * self.scale)
        raise KeyError(gid)

    def err_float(self) -> dict:
        err = {}
        for gid, b in self.bias.items():
            err[gid] = float(np.abs(b).sum()) / self.scale
        for gid, v in self.block_plus_abs.items():
            err[gid] = v / (2.0 * self.scale)
        for gid, v in self.block_minus_abs.items():
            err[gid] = v / (2.0 * self.scale)
        return err

    def report(self) -> CalibrationReport:
        return CalibrationReport.from_err(self.err_float())

    def telescoped(self) -> Fraction:
        return Fraction(int(self.resid.sum()), self.scale)


def accumulate_run(traj: Trajectory, pred: Predictions, family: GroupFamily) -> RunLedger:
    """Post-hoc exact accumulation of a whole run against a family."""
    if pred.T != traj.T:
        raise ValueError(f"prediction length {pred.T} does not match T={traj.T}")
    scale = common_scale(traj, pred, family)
    p_scaled = pred.num * (scale // pred.den)
    y_scaled = traj.y_num * (scale // traj.den)
    resid = p_scaled - y_scaled
    bucket_scaled, bucket_idx = np.unique(p_scaled, return_inverse=True)
    nb = len(bucket_scaled)

    direct = [g for g in family if not isinstance(g, BlockHadamardHalfGroup)]
    blocks = [g for g in family if isinstance(g, BlockHadamardHalfGroup)]

    bias = {}
    for g in direct:
        w = g.weights(traj, p_scaled, scale)
        bias[g.id] = _exact_bincount(bucket_idx, w.astype(np.int64) * resid, nb)

    block_plus_abs: dict = {}
    block_minus_abs: dict = {}
    block_coeff_abs: dict = {}
    if blocks:
        layout = blocks[0].layout
        coeffs = _block_coefficients(layout, bucket_idx, resid, traj.T)
        wanted = {(g.a, g.j, g.sign) for g in blocks}
        for a, (_, c) in coeffs.items():
            # c has shape (buckets in block, L); column j holds the signed
            # functional bias, and the half-group biases are (c0 +- cj)/2
            c0 = c[:, :1]
            plus = np.abs(c0 + c).sum(axis=0)
            minus = np.abs(c0 - c).sum(axis=0)
            habs = np.abs(c).sum(axis=0)
            for j in range(c.shape[1]):
                if (a, j, 1) in wanted:
                    block_plus_abs[f"had+/{a}/{j}"] = int(plus[j])
                if (a, j, -1) in wanted:
                    block_minus_abs[f"had-/{a}/{j}"] = int(minus[j])
                block_coeff_abs[(a, j)] = int(habs[j])

    return RunLedger(
        family=family,
        scale=scale,
        bucket_scaled=bucket_scaled,
        bucket_idx=bucket_idx,
        resid=resid,
        bias=bias,
        block_plus_abs=block_plus_abs,
        block_minus_abs=block_minus_abs,
        block_coeff_abs=block_coeff_abs,
        T=traj.T,
    )


def _block_coefficients(
    layout: BlockLayout, bucket_idx: np.ndarray, values: np.ndarray, T: int
) -> dict:
    """Per block: transform of the bucket-masked value rows.

    Returns {a: (present_buckets, coeffs)} where coeffs[r, j] is the
    transform coefficient <psi_j, block-a values restricted to bucket
    present_buckets[r]>.  One transform per (block, realized bucket):
    O(q_a L log L) per block.
    """
    out = {}
    for a in range(1, layout.K + 1):
        lo = (a - 1) * layout.L
        hi = min(a * layout.L, T)
        if lo >= hi:
            out[a] = (np.zeros(0, dtype=np.int64), np.zeros((0, layout.L), dtype=np.int64))
            continue
        local_idx = bucket_idx[lo:hi]
        local_vals = values[lo:hi]
        present = np.unique(local_idx)
        rows = np.zeros((len(present), layout.L), dtype=np.int64)
        pos = np.searchsorted(present, local_idx)
        rows[pos, np.arange(hi - lo)] = local_vals
        out[a] = (present, fwht(rows))
    return out


# ---------------------------------------------------------------------------
# Deviation statistics
# ---------------------------------------------------------------------------


@dataclass
class DeviationStats:
    """Honesty-deviation and bucket-diversity statistics of one run.

    Linear quantities (A, N_x, R_x) are exact integers over ``scale``;
    quadratic ones (S, E_a) are float64, accurate to ~1e-11 relative at
    desk scale.
    """

    scale: int
    T_prime: int
    A_num: int
    S: float
    n_v: np.ndarray
    N: float
    N_a: Optional[np.ndarray] = None
    E_a: Optional[np.ndarray] = None
    q_a: Optional[np.ndarray] = None
    N_x_num: Optional[np.ndarray] = None
    R_x_num: Optional[np.ndarray] = None
    honest_counts: Optional[np.ndarray] = None

    @property
    def A(self) -> Fraction:
        return Fraction(self.A_num, self.scale)


def deviation_stats(
    traj: Trajectory,
    pred: Predictions,
    layout: Optional[BlockLayout] = None,
    eta: Optional[Fraction] = None,
) -> DeviationStats:
    """A, S, bucket counts, per-block and per-context deviation summaries.

    With a layout, statistics cover rounds 1..T' = K L; otherwise all T.
    Per-context noise/drift splits (N_x, R_x over eta-honest rounds) are
    computed only when ``eta`` is given.
    """
    if pred.T != traj.T:
        raise ValueError(f"prediction length {pred.T} does not match T={traj.T}")
    dens = [traj.den, pred.den]
    if eta is not None:
        dens.append(Fraction(eta).denominator)
    scale = math.lcm(*dens)
    if 4 * traj.T * scale >= _EXACT_SUM_LIMIT:
        raise ValueError("scale overflow in deviation_stats")
    tp = layout.T_prime if layout is not None else traj.T
    p_scaled = (pred.num * (scale // pred.den))[:tp]
    x_scaled = (traj.x_num * (scale // traj.den))[:tp]
    y_scaled = (traj.y_num * (scale // traj.den))[:tp]
    delta = p_scaled - x_scaled

    a_num = int(np.abs(delta).sum())
    s_val = float(np.sum((delta / scale).astype(np.float64) ** 2))
    _, bucket_idx, n_v = np.unique(p_scaled, return_inverse=True, return_counts=True)
    n_big = float(np.sqrt(n_v).sum())

    n_a = e_a = q_a = None
    if layout is not None:
        n_a = np.empty(layout.K, dtype=np.float64)
        e_a = np.empty(layout.K, dtype=np.float64)
        q_a = np.empty(layout.K, dtype=np.int64)
        for a in range(layout.K):
            sl = slice(a * layout.L, (a + 1) * layout.L)
            counts = np.bincount(bucket_idx[sl])
            n_a[a] = np.sqrt(counts[counts > 0]).sum()
            q_a[a] = int((counts > 0).sum())
            e_a[a] = float(np.sum((delta[sl] / scale).astype(np.float64) ** 2))

    n_x = r_x = honest_counts = None
    if eta is not None:
        eta_scaled = Fraction(eta) * scale
        if eta_scaled.denominator != 1:
            raise ValueError("scale does not absorb eta's denominator")
        honest = np.abs(delta) < int(eta_scaled)
        gidx = traj.grid_idx[:tp]
        n_grid = len(traj.grid)
        n_x = _exact_bincount(gidx[honest], (x_scaled - y_scaled)[honest], n_grid)
        r_x = _exact_bincount(gidx[honest], delta[honest], n_grid)
        honest_counts = np.bincount(gidx[honest], minlength=n_grid)

    return DeviationStats(
        scale=scale,
        T_prime=tp,
        A_num=a_num,
        S=s_val,
        n_v=n_v,
        N=n_big,
        N_a=n_a,
        E_a=e_a,
        q_a=q_a,
        N_x_num=n_x,
        R_x_num=r_x,
        honest_counts=honest_counts,
    )


# ---------------------------------------------------------------------------
# Blockwise bias/noise decomposition
# ---------------------------------------------------------------------------


@dataclass
class BlockDecomposition:
    """Signed Hadamard bias (D) and noise (Nz) per (block, bucket, j).

    ``D[a]`` and ``Nz[a]`` are (present_buckets, matrix) pairs with
    integer entries over ``scale``: matrix[r, j] is the coefficient of
    the bias (resp. noise) sequence of block a restricted to bucket r.
    D + Nz equals the signed-functional ledger bias exactly.
    """

    layout: BlockLayout
    scale: int
    D: dict
    Nz: dict

    def signed_err(self, a: int, j: int) -> Fraction:
        """Err of the signed functional h_{a,j} = sum_v |D + Nz|."""
        _, d = self.D[a]
        _, z = self.Nz[a]
        return Fraction(int(np.abs(d[:, j] + z[:, j]).sum()), self.scale)

    def block_parseval_gap(self, E_a: np.ndarray) -> float:
        """Max relative gap of sum_j sum_v D^2 = L * E_a across blocks."""
        worst = 0.0
        for a in range(1, self.layout.K + 1):
            _, d = self.D[a]
            lhs = float(np.sum((d / self.scale).astype(np.float64) ** 2))
            rhs = self.layout.L * float(E_a[a - 1])
            denom = max(abs(rhs), 1e-30)
            worst = max(worst, abs(lhs - rhs) / denom)
        return worst

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["block", "j", "bucket_value", "D", "Nz"])
            for a in range(1, self.layout.K + 1):
                buckets, d = self.D[a]
                _, z = self.Nz[a]
                for r, b in enumerate(buckets):
                    for j in range(self.layout.L):
                        w.writerow(
                            [
                                a,
                                j,
                                str(Fraction(int(b), self.scale)),
                                format_float(d[r, j] / self.scale),
                                format_float(z[r, j] / self.scale),
                            ]
                        )


def block_decompose(traj: Trajectory, pred: Predictions, layout: BlockLayout) -> BlockDecomposition:
    """Transform the bias (p - x) and noise (x - y) streams per (block, bucket)."""
    if pred.T != traj.T:
        raise ValueError(f"prediction length {pred.T} does not match T={traj.T}")
    if layout.T_prime > traj.T:
        raise ValueError("layout covers more rounds than the trajectory")
    scale = math.lcm(traj.den, pred.den)
    if 4 * traj.T * scale >= _EXACT_SUM_LIMIT:
        raise ValueError("scale overflow in block_decompose")
    p_scaled = pred.num * (scale // pred.den)
    x_scaled = traj.x_num * (scale // traj.den)
    y_scaled = traj.y_num * (scale // traj.den)
    _, bucket_idx = np.unique(p_scaled, return_inverse=True)
    d = _block_coefficients(layout, bucket_idx, p_scaled - x_scaled, traj.T)
    nz = _block_coefficients(layout, bucket_idx, x_scaled - y_scaled, traj.T)
    return BlockDecomposition(layout=layout, scale=scale, D=d, Nz=nz)


# ---------------------------------------------------------------------------
# Pathwise inequality suite
# ---------------------------------------------------------------------------

REL_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    ok: bool
    lhs: float
    rhs: float

    def __bool__(self):
        return self.ok


def _ge(name: str, lhs: float, rhs: float, exact: bool = False) -> CheckResult:
    slack = 0.0 if exact else REL_TOL * max(abs(lhs), abs(rhs), 1.0)
    return CheckResult(name=name, ok=lhs >= rhs - slack, lhs=float(lhs), rhs=float(rhs))


def check_telescoping(ledger: RunLedger) -> CheckResult:
    """sum_v B(v, g_all) telescopes to sum_t (p_t - y_t), exactly."""
    if "g_all" in ledger.bias:
        lhs = int(ledger.bias["g_all"].sum())
    else:
        lhs = int(
            _exact_bincount(
                ledger.bucket_idx, ledger.resid, len(ledger.bucket_scaled)
            ).sum()
        )
    rhs = int(ledger.resid.sum())
    return CheckResult("telescoping", lhs == rhs, lhs / ledger.scale, rhs / ledger.scale)


def check_diff_two(ledger: RunLedger) -> list[CheckResult]:
    """Err(g+ - g-) <= Err(g+) + Err(g-) for every constructed pair."""
    out = []
    for plus, minus in ledger.family.signed_pairs():
        if plus.id in ledger.bias and minus.id in ledger.bias:
            signed = Fraction(
                int(np.abs(ledger.bias[plus.id] - ledger.bias[minus.id]).sum()), ledger.scale
            )
            bound = ledger.err_exact(plus.id) + ledger.err_exact(minus.id)
            out.append(
                CheckResult("diff_two", signed <= bound, float(signed), float(bound))
            )
    for (a, j), habs in ledger.block_coeff_abs.items():
        pid, mid = f"had+/{a}/{j}", f"had-/{a}/{j}"
        if pid in ledger.block_plus_abs and mid in ledger.block_minus_abs:
            lhs = 2 * habs  # over 2*scale
            rhs = ledger.block_plus_abs[pid] + ledger.block_minus_abs[mid]
            out.append(CheckResult("diff_two", lhs <= rhs, lhs / 2 / ledger.scale, rhs / 2 / ledger.scale))
    return out


def check_g4_context_decomp(
    ledger: RunLedger, stats: DeviationStats, eta: Fraction, m: int
) -> CheckResult:
    """sum_v |B(v, g3)| >= sum_x |N_x| - sum_x |R_x| whenever eta <= 1/(2m)."""
    if Fraction(eta) > Fraction(1, 2 * m):
        raise ValueError("context decomposition needs eta <= 1/(2m)")
    g3 = next(
        g.id for g in ledger.family if isinstance(g, ThresholdGroup) and g.which == 3
    )
    lhs = ledger.err_exact(g3)
    rhs = Fraction(
        int(np.abs(stats.N_x_num).sum()) - int(np.abs(stats.R_x_num).sum()), stats.scale
    )
    return CheckResult("g4_context_decomp", lhs >= rhs, float(lhs), float(rhs))


def check_l1_quantization(stats: DeviationStats, m: int) -> CheckResult:
    """A >= sum_v n_v^2 / (16 T') - T'/m - 1, exactly in rationals."""
    tp = stats.T_prime
    lhs = stats.A
    rhs = Fraction(int(np.sum(stats.n_v**2)), 16 * tp) - Fraction(tp, m) - 1
    return CheckResult("l1_quantization", lhs >= rhs, float(lhs), float(rhs))


def check_n_from_a(stats: DeviationStats, m: int) -> CheckResult:
    """N >= T' / (4 sqrt(A + T'/m + 1))."""
    tp = stats.T_prime
    rhs = tp / (4.0 * math.sqrt(float(stats.A) + tp / m + 1.0))
    return _ge("n_from_a", stats.N, rhs)


def check_block_mass(stats: DeviationStats) -> list[CheckResult]:
    """N <= sum_a N_a <= sqrt(K) N."""
    total = float(stats.N_a.sum())
    k = len(stats.N_a)
    return [
        _ge("block_mass_lower", total, stats.N),
        _ge("block_mass_upper", math.sqrt(k) * stats.N, total),
    ]


def check_bias_averaging(decomp: BlockDecomposition, stats: DeviationStats) -> list[CheckResult]:
    """(1/L) sum_j sum_v |D| <= sqrt(q_a E_a) per block."""
    out = []
    lay = decomp.layout
    for a in range(1, lay.K + 1):
        _, d = decomp.D[a]
        lhs = float(np.abs(d / decomp.scale).sum()) / lay.L
        rhs = math.sqrt(float(stats.q_a[a - 1]) * float(stats.E_a[a - 1]))
        out.append(_ge("bias_averaging", rhs, lhs))
    return out


def check_block_parseval(decomp: BlockDecomposition, stats: DeviationStats) -> CheckResult:
    gap = decomp.block_parseval_gap(stats.E_a)
    return CheckResult("block_parseval", gap <= REL_TOL, gap, REL_TOL)


def check_bits_mse(
    traj: Trajectory, pred: Predictions, report: CalibrationReport
) -> list[CheckResult]:
    """Appendix-style squared loss controls for the bit environment:
    per-round miss penalty (exact) and squared loss <= (2 - 1/(2N)) MCerr."""
    n = 1 << traj.params["k"]
    scale = math.lcm(traj.den, pred.den)
    p_scaled = pred.num * (scale // pred.den)
    y_scaled = traj.y_num * (scale // traj.den)
    val = traj.grid_idx
    # p in J_val: val/N <= p < (val+1)/N, last interval closed at 1
    unit = scale // n
    in_interval = (p_scaled >= val * unit) & (
        (p_scaled < (val + 1) * unit) | ((val == n - 1) & (p_scaled == scale))
    )
    diff = p_scaled - y_scaled
    # exact per-round penalty: a miss means (p - y)^2 >= 1/(4 N^2),
    # i.e. (2 N scaled diff)^2 >= scale^2 in integers
    miss_sq = diff[~in_interval] ** 2
    floor_sq = (scale // (2 * n)) ** 2
    miss_ok = bool(np.all(miss_sq >= floor_sq))
    worst = float(miss_sq.min(initial=floor_sq)) / scale**2
    results = [CheckResult("bits_miss_penalty", miss_ok, worst, floor_sq / scale**2)]
    lhs = float(np.sum((diff / scale).astype(np.float64) ** 2))
    rhs = (2.0 - 1.0 / (2 * n)) * report.mcerr
    results.append(_ge("bits_mse_vs_mcerr", rhs, lhs))
    return results


def miss_count(traj: Trajectory, pred: Predictions) -> int:
    """Rounds whose prediction lands outside the context's interval J_val."""
    n = 1 << traj.params["k"]
    scale = math.lcm(traj.den, pred.den)
    p_scaled = pred.num * (scale // pred.den)
    val = traj.grid_idx
    unit = scale // n
    in_interval = (p_scaled >= val * unit) & (
        (p_scaled < (val + 1) * unit) | ((val == n - 1) & (p_scaled == scale))
    )
    return int((~in_interval).sum())
