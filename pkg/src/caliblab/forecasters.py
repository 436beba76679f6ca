"""Forecasters: honest strategies, marginal oracles, and black-box reductions.

The sequential protocol per round: the context is revealed, the
forecaster proposes a finite-support distribution over [0,1], the
(obliviously fixed) outcome is determined, the prediction is drawn from
the proposal, and only then does the forecaster observe the round.
Causality is structural: ``propose`` receives a history view that ends
at the previous round, and the current outcome is appended only after
``observe``.

Deterministic forecasters emit point masses and never touch the RNG, so
their looped and vectorized runs coincide bit for bit (tested).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .calibration import Predictions
from .environments import ContextRecord, Trajectory

DUMMY_CONTEXT = ContextRecord(mean=Fraction(1, 2))


@dataclass(frozen=True)
class PredictionDistribution:
    """Finite-support distribution on [0,1] with exact rational weights."""

    support: tuple

    def __post_init__(self):
        total = Fraction(0)
        for value, prob in self.support:
            if not 0 <= value <= 1:
                raise ValueError(f"support value outside [0,1]: {value}")
            if prob < 0:
                raise ValueError(f"negative probability: {prob}")
            total += prob
        if total != 1:
            raise ValueError(f"probabilities must sum to 1 exactly, got {total}")

    @classmethod
    def point_mass(cls, value: Fraction) -> "PredictionDistribution":
        return cls(support=((Fraction(value), Fraction(1)),))

    @classmethod
    def from_weights(cls, pairs) -> "PredictionDistribution":
        merged: dict = {}
        for value, prob in pairs:
            if prob == 0:
                continue
            value = Fraction(value)
            merged[value] = merged.get(value, Fraction(0)) + Fraction(prob)
        return cls(support=tuple(sorted(merged.items())))

    @property
    def is_point_mass(self) -> bool:
        return len(self.support) == 1

    def sample(self, rng: np.random.Generator) -> Fraction:
        if self.is_point_mass:
            return self.support[0][0]
        u = rng.random()
        acc = 0.0
        for value, prob in self.support:
            acc += float(prob)
            if u < acc:
                return value
        return self.support[-1][0]

    def mass_in_interval(self, lo: Fraction, hi: Fraction, closed_right: bool) -> Fraction:
        total = Fraction(0)
        for value, prob in self.support:
            if lo <= value < hi or (closed_right and value == hi):
                total += prob
        return total


class HistoryView:
    """Read-only transcript of completed rounds (context, prediction, outcome)."""

    def __init__(self):
        self._records: list = []

    def __len__(self):
        return len(self._records)

    def __getitem__(self, s: int):
        return self._records[s]

    def _append(self, record) -> None:
        self._records.append(record)


class Forecaster:
    """Interface: propose a distribution, then observe the realized round."""

    id = "forecaster"
    deterministic = False
    context_blind = False
    stateless = False

    def propose(self, ctx: ContextRecord, history: HistoryView) -> PredictionDistribution:
        raise NotImplementedError

    def observe(self, ctx: ContextRecord, p: Fraction, y: Fraction) -> None:
        pass

    def predict_all(self, traj: Trajectory, rng: Optional[np.random.Generator]) -> Optional[Predictions]:
        """Whole-run fast path, or None to fall back to the round loop."""
        return None


class HonestForecaster(Forecaster):
    """Point mass at the label mean the context encodes."""

    id = "honest"
    deterministic = True

    def propose(self, ctx, history):
        return PredictionDistribution.point_mass(ctx.label_mean())

    def predict_all(self, traj, rng):
        return Predictions(num=traj.x_num.copy(), den=traj.den)


def _round_to_grid(num: int, den: int, q: int) -> int:
    """floor(num/den * q + 1/2): nearest multiple of 1/q, half rounds up."""
    return (2 * num * q + den) // (2 * den)


class RoundedHonestForecaster(Forecaster):
    """Honest mean rounded to the nearest multiple of 1/Q (half up)."""

    deterministic = True

    def __init__(self, q: int):
        if q < 1:
            raise ValueError(f"rounding denominator must be >= 1, got {q}")
        self.q = q
        self.id = f"rounded_honest@Q={q}"

    def propose(self, ctx, history):
        x = ctx.label_mean()
        return PredictionDistribution.point_mass(
            Fraction(_round_to_grid(x.numerator, x.denominator, self.q), self.q)
        )

    def predict_all(self, traj, rng):
        num = (2 * traj.x_num * self.q + traj.den) // (2 * traj.den)
        return Predictions(num=num, den=self.q)


class OffsetForecaster(Forecaster):
    """Always predicts the honest mean plus a fixed rational offset."""

    deterministic = True

    def __init__(self, offset: Fraction):
        self.offset = Fraction(offset)
        self.id = f"overshoot@offset={self.offset}"

    def propose(self, ctx, history):
        return PredictionDistribution.point_mass(ctx.label_mean() + self.offset)

    def predict_all(self, traj, rng):
        den = math.lcm(traj.den, self.offset.denominator)
        num = traj.x_num * (den // traj.den) + self.offset.numerator * (
            den // self.offset.denominator
        )
        return Predictions(num=num, den=den)


class ConstantForecaster(Forecaster):
    """Consolidates everything onto one prediction value."""

    deterministic = True

    def __init__(self, value: Fraction = Fraction(1, 2)):
        self.value = Fraction(value)
        if not 0 <= self.value <= 1:
            raise ValueError("constant prediction must lie in [0,1]")
        self.id = f"constant@v={self.value}"

    def propose(self, ctx, history):
        return PredictionDistribution.point_mass(self.value)

    def predict_all(self, traj, rng):
        num = np.full(traj.T, self.value.numerator, dtype=np.int64)
        return Predictions(num=num, den=self.value.denominator)


class EmpiricalMeanBucketOracle(Forecaster):
    """Context-blind: running outcome mean rounded to 1/Q; 1/2 before data."""

    deterministic = True
    context_blind = True

    def __init__(self, q: int):
        if q < 1:
            raise ValueError(f"bucket denominator must be >= 1, got {q}")
        self.q = q
        self.id = f"empirical_mean_bucket@Q={q}"
        self._sum = Fraction(0)
        self._count = 0

    def propose(self, ctx, history):
        if self._count == 0:
            return PredictionDistribution.point_mass(Fraction(1, 2))
        mean = self._sum / self._count
        return PredictionDistribution.point_mass(
            Fraction(_round_to_grid(mean.numerator, mean.denominator, self.q), self.q)
        )

    def observe(self, ctx, p, y):
        self._sum += y
        self._count += 1

    def predict_sequence(self, y_num: np.ndarray, y_den: int, rng) -> tuple[np.ndarray, int]:
        t = len(y_num)
        den = math.lcm(2, self.q)
        num = np.empty(t, dtype=np.int64)
        if t == 0:
            return num, den
        num[0] = den // 2
        if t > 1:
            cums = np.cumsum(y_num[:-1])
            n_prev = np.arange(1, t, dtype=np.int64)
            k = (2 * cums * self.q + n_prev * y_den) // (2 * n_prev * y_den)
            num[1:] = k * (den // self.q)
        return num, den

    def predict_all(self, traj, rng):
        num, den = self.predict_sequence(traj.y_num, traj.den, rng)
        return Predictions(num=num, den=den)


class UniformRandomOracle(Forecaster):
    """Context-blind: the uniform distribution over {0, 1/Q, ..., 1}."""

    context_blind = True
    stateless = True

    def __init__(self, q: int):
        if q < 1:
            raise ValueError(f"grid denominator must be >= 1, got {q}")
        self.q = q
        self.id = f"uniform_random@Q={q}"
        self._dist = PredictionDistribution(
            support=tuple((Fraction(i, q), Fraction(1, q + 1)) for i in range(q + 1))
        )

    def propose(self, ctx, history):
        return self._dist

    def predict_sequence(self, y_num, y_den, rng):
        return rng.integers(0, self.q + 1, size=len(y_num)).astype(np.int64), self.q

    def predict_all(self, traj, rng):
        num, den = self.predict_sequence(traj.y_num, traj.den, rng)
        return Predictions(num=num, den=den)


class ContextBlindWrapper(Forecaster):
    """Feeds a fixed dummy context to the wrapped forecaster everywhere."""

    context_blind = True

    def __init__(self, inner: Forecaster):
        self.inner = inner
        self.id = f"context_blind({inner.id})"
        self.deterministic = inner.deterministic
        self.stateless = inner.stateless

    def propose(self, ctx, history):
        return self.inner.propose(DUMMY_CONTEXT, history)

    def observe(self, ctx, p, y):
        self.inner.observe(DUMMY_CONTEXT, p, y)

    def predict_sequence(self, y_num, y_den, rng):
        inner = getattr(self.inner, "predict_sequence", None)
        if inner is None:
            raise AttributeError("wrapped oracle has no sequence fast path")
        return inner(y_num, y_den, rng)


def context_blind(oracle: Forecaster) -> ContextBlindWrapper:
    return ContextBlindWrapper(oracle)


def uniform_weights(m: int) -> Callable:
    def rule(ctx, history):
        return [Fraction(1, m)] * m

    return rule


class ProperReduction(Forecaster):
    """Convex mixture of m context-blind oracle copies.

    The weight rule maps (context, history) to exact simplex weights;
    anything off the simplex is a hard error.  The per-copy update policy
    is 'largest' (only the copy with the largest weight observes the
    round; ties to the lowest index), 'all', or 'none'.
    """

    def __init__(
        self,
        oracle_factory: Callable[[], Forecaster],
        m: int,
        weight_rule: Optional[Callable] = None,
        update_policy: str = "largest",
    ):
        if m < 1:
            raise ValueError(f"copy count must be >= 1, got {m}")
        if update_policy not in ("largest", "all", "none"):
            raise ValueError(f"unknown update policy: {update_policy!r}")
        self.copies = [oracle_factory() for _ in range(m)]
        for c in self.copies:
            if not c.context_blind:
                raise ValueError(f"oracle {c.id} is not context-blind")
        self.m = m
        self.weight_rule = weight_rule or uniform_weights(m)
        self.update_policy = update_policy
        self._last_weights: Optional[list] = None
        self.id = f"proper_reduction(m={m},oracle={self.copies[0].id},update={update_policy})"

    def _weights(self, ctx, history) -> list:
        w = [Fraction(v) for v in self.weight_rule(ctx, history)]
        if len(w) != self.m or any(v < 0 for v in w) or sum(w) != 1:
            raise ValueError(f"weight vector off the simplex: {w}")
        return w

    def propose(self, ctx, history):
        weights = self._weights(ctx, history)
        self._last_weights = weights
        proposals = [c.propose(ctx, history) for c in self.copies]
        if self.m == 1:
            return proposals[0]
        pairs = []
        for w, dist in zip(weights, proposals):
            for value, prob in dist.support:
                pairs.append((value, w * prob))
        return PredictionDistribution.from_weights(pairs)

    def observe(self, ctx, p, y):
        if self.update_policy == "none":
            return
        if self.update_policy == "all":
            for c in self.copies:
                c.observe(ctx, p, y)
            return
        weights = self._last_weights or [Fraction(1, self.m)] * self.m
        best = max(range(self.m), key=lambda i: (weights[i], -i))
        self.copies[best].observe(ctx, p, y)

    def predict_all(self, traj, rng):
        if self.m != 1:
            return None
        copy = self.copies[0]
        seq = getattr(copy, "predict_sequence", None)
        if seq is None:
            return None
        if not (copy.stateless or self.update_policy in ("largest", "all")):
            return None
        num, den = seq(traj.y_num, traj.den, rng)
        return Predictions(num=num, den=den)


class PatternRouter(Forecaster):
    """Routes each round to a fresh oracle copy per realized group pattern.

    Only binary prediction-independent families are admissible: the
    routing pattern must be known before the prediction is made.
    """

    def __init__(self, oracle_factory: Callable[[], Forecaster], groups):
        for g in groups:
            if not g.prediction_independent or not g.binary:
                raise ValueError(
                    f"group {g.id} is prediction-dependent or non-binary; routing is invalid"
                )
        self.groups = list(groups)
        self.oracle_factory = oracle_factory
        self.copies: dict = {}
        self._histories: dict = {}
        self.cells: dict = {}
        self.id = f"pattern_router(k={len(self.groups)})"

    def _pattern(self, ctx) -> tuple:
        return tuple(int(g.evaluate(ctx, None)) for g in self.groups)

    def _copy_for(self, z: tuple) -> tuple[Forecaster, HistoryView]:
        if z not in self.copies:
            self.copies[z] = self.oracle_factory()
            self._histories[z] = HistoryView()
            self.cells[z] = {"p": [], "y": []}
        return self.copies[z], self._histories[z]

    def propose(self, ctx, history):
        copy, cell_history = self._copy_for(self._pattern(ctx))
        return copy.propose(ctx, cell_history)

    def observe(self, ctx, p, y):
        z = self._pattern(ctx)
        copy, cell_history = self._copy_for(z)
        copy.observe(ctx, p, y)
        cell_history._append((ctx, p, y))
        self.cells[z]["p"].append(p)
        self.cells[z]["y"].append(y)

    def predict_all(self, traj, rng):
        probe = self.oracle_factory()
        if getattr(probe, "predict_sequence", None) is None or not probe.deterministic:
            return None
        zeros = np.zeros(traj.T, dtype=np.int64)
        weight_rows = np.stack([g.weights(traj, zeros, traj.den) for g in self.groups])
        patterns, inverse = np.unique(weight_rows.T, axis=0, return_inverse=True)
        dens = []
        parts = []
        for c in range(len(patterns)):
            idx = np.flatnonzero(inverse == c)
            copy = self.oracle_factory()
            num, den = copy.predict_sequence(traj.y_num[idx], traj.den, rng)
            z = tuple(int(b) for b in patterns[c])
            self.copies[z] = copy
            self.cells[z] = {
                "p": [Fraction(int(v), den) for v in num],
                "y": [Fraction(int(traj.y_num[i]), traj.den) for i in idx],
            }
            dens.append(den)
            parts.append((idx, num, den))
        den = math.lcm(*dens)
        out = np.empty(traj.T, dtype=np.int64)
        for idx, num, part_den in parts:
            out[idx] = num * (den // part_den)
        return Predictions(num=out, den=den)

    def cell_sizes(self) -> dict:
        return {z: len(rec["p"]) for z, rec in self.cells.items()}

    def cell_err(self, z: tuple) -> Fraction:
        """Marginal calibration error of one cell's transcript."""
        rec = self.cells[z]
        biases: dict = {}
        for p, y in zip(rec["p"], rec["y"]):
            biases[p] = biases.get(p, Fraction(0)) + (p - y)
        return sum((abs(b) for b in biases.values()), Fraction(0))

    def cell_summary(self) -> list[tuple]:
        """(pattern string, T_z, cell Err) rows, sorted by pattern."""
        rows = []
        for z in sorted(self.cells):
            rows.append(("".join(map(str, z)), len(self.cells[z]["p"]), float(self.cell_err(z))))
        return rows


def run_forecaster(
    traj: Trajectory,
    forecaster: Forecaster,
    rng: Optional[np.random.Generator] = None,
    prefer_vectorized: bool = True,
) -> Predictions:
    """Drive one forecaster through a trajectory; returns its predictions."""
    if prefer_vectorized:
        fast = forecaster.predict_all(traj, rng)
        if fast is not None:
            return fast
    history = HistoryView()
    values = []
    for t in range(traj.T):
        ctx = traj.context(t)
        dist = forecaster.propose(ctx, history)
        y = traj.outcome(t)
        p = dist.sample(rng) if not dist.is_point_mass else dist.support[0][0]
        forecaster.observe(ctx, p, y)
        history._append((ctx, p, y))
        values.append(p)
    return Predictions.from_fractions(values)


def simple_marginal_oracles(q: int) -> dict:
    """Factories for the two shipped context-blind marginal oracles."""
    return {
        "empirical_mean_bucket": lambda: EmpiricalMeanBucketOracle(q),
        "uniform_random": lambda: UniformRandomOracle(q),
    }


def make_forecaster_factory(fid: str, **params) -> Callable[[], Forecaster]:
    """Resolve a forecaster id (as used in configs) to a fresh-instance factory."""

    def q(default):
        return int(params.get("Q", default))

    if fid == "honest":
        return HonestForecaster
    if fid == "rounded_honest":
        return lambda: RoundedHonestForecaster(q(16))
    if fid == "overshoot":
        offset = Fraction(params["offset"])
        return lambda: OffsetForecaster(offset)
    if fid == "constant":
        value = Fraction(params.get("value", Fraction(1, 2)))
        return lambda: ConstantForecaster(value)
    if fid == "empirical_mean_bucket":
        return lambda: EmpiricalMeanBucketOracle(q(4))
    if fid == "uniform_random":
        return lambda: UniformRandomOracle(q(7))
    if fid == "proper_reduction":
        oracle_id = params.get("oracle", "uniform_random")
        oracle_factory = make_forecaster_factory(oracle_id, **params)
        m = int(params.get("m", 1))
        policy = params.get("update", "largest")
        return lambda: ProperReduction(oracle_factory, m, update_policy=policy)
    raise KeyError(fid)
