"""Monte Carlo checks of familywise error control.

Test statistics are multivariate normal with unit variances, a chosen
correlation matrix and a nonnegative mean shift on false nulls; p-values
are one-sided upper tail. Every repetition draws from its own random
stream keyed by (seed, repetition), so repetitions can be split over
worker processes and merged by adding counts without changing a single
bit of the result.
"""
import itertools
import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from multiprocessing import Pool
from typing import Tuple

import numpy as np
from scipy.special import ndtr

from decomposition import decompose
from engine import rejection_vector
from localtests import PValueVector


logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05
DEFAULT_REPS = 10000
DEFAULT_SEED = 0
DEFAULT_DELTA_FALSE = 6.0
PIVOT_THRESHOLD = 1e-12
SYMMETRY_TOLERANCE = 1e-12
MAX_SUBSET_FAMILY = 12
MAX_CLOSURE_MEMBERS = 20


class NotPositiveDefiniteError(ValueError):
    pass


class ScenarioError(ValueError):
    pass


def cholesky(correlation):
    """Lower triangular L with L @ L.T equal to ``correlation``."""
    matrix = np.asarray(correlation, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ScenarioError(f'correlation must be a square matrix, got shape {matrix.shape}')
    if not np.allclose(matrix, matrix.T, rtol=0, atol=SYMMETRY_TOLERANCE):
        raise ScenarioError('correlation matrix is not symmetric')
    if not np.allclose(np.diag(matrix), 1.0, rtol=0, atol=SYMMETRY_TOLERANCE):
        raise ScenarioError('correlation matrix needs a unit diagonal')
    try:
        factor = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError('correlation matrix is not positive definite')
    pivots = np.diag(factor) ** 2
    if np.any(pivots <= PIVOT_THRESHOLD):
        raise NotPositiveDefiniteError(f'correlation matrix is not positive definite (pivot {pivots.min():.3g})')
    return factor


def exchangeable_correlation(n, rho):
    matrix = np.full((n, n), float(rho))
    np.fill_diagonal(matrix, 1.0)
    return matrix


def upper_tail_pvalues(z):
    """1 - Phi(z), evaluated through the erfc-based ``ndtr`` (accurate in the far tail)."""
    return ndtr(-np.asarray(z, dtype=float))


@dataclass(frozen=True)
class ScenarioConfig:
    truth: Tuple[bool, ...]
    effect: Tuple[float, ...]
    correlation: Tuple[Tuple[float, ...], ...]
    reps: int = DEFAULT_REPS
    seed: int = DEFAULT_SEED
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        n = len(self.truth)
        if n == 0:
            raise ScenarioError('scenario needs at least one hypothesis')
        truth = tuple(bool(t) for t in self.truth)
        if len(self.effect) != n:
            raise ScenarioError(f'expected {n} effects, got {len(self.effect)}')
        if any(e < 0 for e in self.effect):
            raise ScenarioError('effects must be nonnegative')
        effect = tuple(0.0 if t else float(e) for t, e in zip(truth, self.effect))
        correlation = tuple(tuple(float(x) for x in row) for row in self.correlation)
        if len(correlation) != n or any(len(row) != n for row in correlation):
            raise ScenarioError(f'expected a {n}x{n} correlation matrix')
        if self.reps < 1:
            raise ScenarioError(f'reps must be at least 1, got {self.reps}')
        if not 0 <= self.seed < 2 ** 64:
            raise ScenarioError(f'seed must be a 64-bit unsigned integer, got {self.seed}')
        if not 0 < self.alpha < 1:
            raise ScenarioError(f'alpha must lie in (0,1), got {self.alpha}')
        object.__setattr__(self, 'truth', truth)
        object.__setattr__(self, 'effect', effect)
        object.__setattr__(self, 'correlation', correlation)
        cholesky(correlation)

    @classmethod
    def exchangeable(cls, truth, effect, rho=0.0, **kwargs):
        return cls(truth=tuple(truth), effect=tuple(effect),
                   correlation=exchangeable_correlation(len(truth), rho).tolist(), **kwargs)

    @property
    def n(self):
        return len(self.truth)

    @property
    def nulls(self):
        return tuple(i for i, t in enumerate(self.truth, start=1) if t)

    @cached_property
    def factor(self):
        return cholesky(self.correlation)


@dataclass(frozen=True)
class FWERReport:
    fwer_hat: float
    se: float
    per_hypothesis_rejection_rate: Tuple[float, ...]
    reps: int
    seed: int
    alpha: float

    @property
    def bound(self):
        return self.alpha + 3 * self.se

    @property
    def passed(self):
        return self.fwer_hat <= self.bound


@dataclass(frozen=True)
class SubsetResult:
    subset: Tuple[int, ...]
    fwer_hat: float
    se: float
    bound: float
    passed: bool


@dataclass(frozen=True)
class SubsetReport:
    results: Tuple[SubsetResult, ...]
    reps: int
    seed: int
    alpha: float
    delta_false: float

    @property
    def passed(self):
        return all(result.passed for result in self.results)


@dataclass(frozen=True)
class PowerRow:
    id: int
    null: bool
    covering_rate: float
    closure_rate: float


@dataclass(frozen=True)
class PowerReport:
    rows: Tuple[PowerRow, ...]
    covering: FWERReport
    closure: FWERReport
    covering_any_false: float
    closure_any_false: float


def standard_error(rate, reps):
    return math.sqrt(rate * (1 - rate) / reps)


def sample_statistics(scenario, rep_index):
    """Test statistics of repetition ``rep_index``; the same index always gives the same draw."""
    if not 0 <= rep_index < scenario.reps:
        raise ScenarioError(f'repetition {rep_index} outside 0..{scenario.reps - 1}')
    rng = np.random.default_rng([scenario.seed, rep_index])
    g = rng.standard_normal(scenario.n)
    return np.asarray(scenario.effect) + scenario.factor @ g


def sample_pvalues(scenario, rep_index):
    return PValueVector(tuple(upper_tail_pvalues(sample_statistics(scenario, rep_index)).tolist()))


def closure_oracle(p, alpha, members):
    """Closed testing with Bonferroni tests of every intersection hypothesis."""
    members = tuple(sorted(members))
    if len(members) > MAX_CLOSURE_MEMBERS:
        raise ValueError(f'closed testing limited to {MAX_CLOSURE_MEMBERS} members, got {len(members)}')
    retained = set()
    for size in range(1, len(members) + 1):
        for intersection in itertools.combinations(members, size):
            if min(p[i] for i in intersection) > alpha / size:
                retained.update(intersection)
    return frozenset(i for i in members if i not in retained)


def _tally(spec, plan, scenario, test, start, stop, closure):
    """Counts over repetitions start..stop-1.

    Returns (any true null rejected, any false null rejected, per-hypothesis
    rejections) for the covering procedure and, if asked, for closed testing
    on the whole family.
    """
    n = spec.n
    nulls = scenario.nulls
    counts = {'covering': [0, 0, [0] * n]}
    if closure:
        counts['closure'] = [0, 0, [0] * n]
    for rep in range(start, stop):
        p = sample_pvalues(scenario, rep)
        decisions = {'covering': rejection_vector(spec, plan, test, p, scenario.alpha)}
        if closure:
            rejected = closure_oracle(p, scenario.alpha, spec.ids)
            decisions['closure'] = tuple(i in rejected for i in spec.ids)
        for name, psi in decisions.items():
            tally = counts[name]
            if any(psi[i - 1] for i in nulls):
                tally[0] += 1
            if any(psi[i - 1] for i in spec.ids if i not in nulls):
                tally[1] += 1
            for k, value in enumerate(psi):
                tally[2][k] += value
    return counts


def _merge(parts):
    merged = {}
    for part in parts:
        for name, (errors, hits, per_hypothesis) in part.items():
            if name not in merged:
                merged[name] = [0, 0, [0] * len(per_hypothesis)]
            merged[name][0] += errors
            merged[name][1] += hits
            merged[name][2] = [a + b for a, b in zip(merged[name][2], per_hypothesis)]
    return merged


def _shards(reps, workers):
    size = math.ceil(reps / workers)
    return [(start, min(start + size, reps)) for start in range(0, reps, size)]


def _run(spec, scenario, test, workers=1, closure=False, plan=None):
    if scenario.n != spec.n:
        raise ScenarioError(f'scenario has {scenario.n} hypotheses, family has {spec.n}')
    plan = plan or decompose(spec)
    workers = max(1, min(workers, scenario.reps))
    shards = _shards(scenario.reps, workers)
    logger.info('simulating %d repetitions in %d shard(s), seed %d', scenario.reps, len(shards), scenario.seed)
    arguments = [(spec, plan, scenario, test, start, stop, closure) for start, stop in shards]
    if workers == 1:
        parts = [_tally(*args) for args in arguments]
    else:
        with Pool(workers) as pool:
            parts = pool.starmap(_tally, arguments)
    return _merge(parts)


def _report(counts, scenario):
    errors, _, per_hypothesis = counts
    fwer_hat = errors / scenario.reps
    return FWERReport(
        fwer_hat=fwer_hat,
        se=standard_error(fwer_hat, scenario.reps),
        per_hypothesis_rejection_rate=tuple(c / scenario.reps for c in per_hypothesis),
        reps=scenario.reps,
        seed=scenario.seed,
        alpha=scenario.alpha,
    )


def estimate_fwer(spec, scenario, test, workers=1, plan=None):
    counts = _run(spec, scenario, test, workers=workers, plan=plan)
    report = _report(counts['covering'], scenario)
    logger.info('estimated FWER %.5f (se %.5f)', report.fwer_hat, report.se)
    return report


def subsetwise_check(spec, test, alpha=DEFAULT_ALPHA, reps=DEFAULT_REPS, delta_false=DEFAULT_DELTA_FALSE,
                     correlation=None, seed=DEFAULT_SEED, workers=1):
    """Error rate on every nonempty subset S of true nulls.

    Hypotheses outside S are false with mean shift ``delta_false``; each
    estimate of P(some member of S rejected) is held against
    alpha + 3 standard errors.
    """
    if spec.n > MAX_SUBSET_FAMILY:
        raise ValueError(f'subset-wise check limited to {MAX_SUBSET_FAMILY} hypotheses, got {spec.n}')
    if correlation is None:
        correlation = np.eye(spec.n)
    correlation = np.asarray(correlation, dtype=float).tolist()
    plan = decompose(spec)
    results = []
    for size in range(1, spec.n + 1):
        for subset in itertools.combinations(spec.ids, size):
            scenario = ScenarioConfig(
                truth=tuple(i in subset for i in spec.ids),
                effect=tuple(0.0 if i in subset else delta_false for i in spec.ids),
                correlation=correlation, reps=reps, seed=seed, alpha=alpha,
            )
            report = estimate_fwer(spec, scenario, test, workers=workers, plan=plan)
            results.append(SubsetResult(subset=subset, fwer_hat=report.fwer_hat, se=report.se,
                                        bound=report.bound, passed=report.passed))
            if not report.passed:
                logger.warning('subset %s exceeds its bound: %.5f > %.5f', subset, report.fwer_hat, report.bound)
    return SubsetReport(results=tuple(results), reps=reps, seed=seed, alpha=alpha, delta_false=delta_false)


def power_report(spec, scenario, test, workers=1):
    """Covering procedure against closed testing of the whole family, same draws."""
    counts = _run(spec, scenario, test, workers=workers, closure=True)
    covering = _report(counts['covering'], scenario)
    closure = _report(counts['closure'], scenario)
    rows = tuple(
        PowerRow(id=i, null=scenario.truth[i - 1],
                 covering_rate=covering.per_hypothesis_rejection_rate[i - 1],
                 closure_rate=closure.per_hypothesis_rejection_rate[i - 1])
        for i in spec.ids
    )
    return PowerReport(
        rows=rows, covering=covering, closure=closure,
        covering_any_false=counts['covering'][1] / scenario.reps,
        closure_any_false=counts['closure'][1] / scenario.reps,
    )


SCENARIO_SHAPES = {
    'truth': 'a list of booleans',
    'effect': 'a list of numbers',
    'rho': 'a number',
    'corr': 'a list of number lists',
    'reps': 'an integer',
    'seed': 'an integer',
    'alpha': 'a number',
}


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _has_shape(key, value):
    if key == 'truth':
        return isinstance(value, list) and all(isinstance(t, bool) or _is_number(t) for t in value)
    if key == 'effect':
        return isinstance(value, list) and all(_is_number(e) for e in value)
    if key == 'corr':
        return isinstance(value, list) and all(
            isinstance(row, list) and all(_is_number(x) for x in row) for row in value)
    if key in ('reps', 'seed'):
        return isinstance(value, int) and not isinstance(value, bool)
    return _is_number(value)


def parse_scenario(text, n=None):
    """Read a scenario file of ``key = value`` lines.

    Keys: truth, effect, rho or corr, reps, seed, alpha. Lists use JSON
    brackets; '#' starts a comment.
    """
    values = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition('=')
        key = key.strip()
        if not sep or key not in SCENARIO_SHAPES:
            raise ScenarioError(f"{line_number}: expected 'key = value' with a known key, got '{line}'")
        if key in values:
            raise ScenarioError(f"{line_number}: duplicate key '{key}'")
        try:
            values[key] = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ScenarioError(f'{line_number}: malformed value for {key}: {e.msg}')
        if not _has_shape(key, values[key]):
            raise ScenarioError(f'{line_number}: {key} must be {SCENARIO_SHAPES[key]}, got {raw.strip()}')

    if 'truth' not in values:
        raise ScenarioError("scenario needs 'truth'")
    truth = tuple(bool(t) for t in values['truth'])
    if n is not None and len(truth) != n:
        raise ScenarioError(f'scenario has {len(truth)} hypotheses, family has {n}')
    if 'rho' in values and 'corr' in values:
        raise ScenarioError("give either 'rho' or 'corr', not both")
    if 'corr' in values:
        correlation = values['corr']
    else:
        correlation = exchangeable_correlation(len(truth), values.get('rho', 0.0)).tolist()
    return ScenarioConfig(
        truth=truth,
        effect=tuple(values.get('effect', [0.0] * len(truth))),
        correlation=correlation,
        reps=int(values.get('reps', DEFAULT_REPS)),
        seed=int(values.get('seed', DEFAULT_SEED)),
        alpha=float(values.get('alpha', DEFAULT_ALPHA)),
    )


def fwer_to_dict(report):
    return {
        'fwer_hat': report.fwer_hat,
        'se': report.se,
        'bound': report.bound,
        'per_hypothesis_rejection_rate': list(report.per_hypothesis_rejection_rate),
        'reps': report.reps,
        'seed': report.seed,
        'alpha': report.alpha,
    }


def subsetwise_to_dict(report):
    return {
        'alpha': report.alpha,
        'reps': report.reps,
        'seed': report.seed,
        'delta_false': report.delta_false,
        'passed': report.passed,
        'subsets': [
            {'subset': list(r.subset), 'fwer_hat': r.fwer_hat, 'se': r.se, 'bound': r.bound, 'passed': r.passed}
            for r in report.results
        ],
    }


def power_to_dict(report):
    return {
        'alpha': report.covering.alpha,
        'reps': report.covering.reps,
        'seed': report.covering.seed,
        'covering_fwer': report.covering.fwer_hat,
        'closure_fwer': report.closure.fwer_hat,
        'covering_any_false': report.covering_any_false,
        'closure_any_false': report.closure_any_false,
        'hypotheses': [
            {'id': r.id, 'null': r.null, 'covering_rate': r.covering_rate, 'closure_rate': r.closure_rate}
            for r in report.rows
        ],
    }
