"""Alpha-level multiple tests run on a single leaf sub-family.

Every procedure here controls the familywise error rate on the members
it is handed (Hochberg only under nonnegative dependence, which has to be
acknowledged explicitly). Comparisons reject at equality and ties in the
p-value ranking go to the smaller hypothesis id.
"""
import math
from dataclasses import dataclass
from typing import Optional, Tuple


KINDS = ('bonferroni', 'holm', 'hochberg', 'fixed_sequence', 'weighted_bonferroni')
WEIGHT_TOLERANCE = 1e-12


class LocalTestError(ValueError):
    pass


class HochbergDependenceError(LocalTestError, UserWarning):
    pass


class PValueError(ValueError):
    pass


@dataclass(frozen=True)
class PValueVector:
    """Raw p-values indexed by hypothesis id (``p[1]`` is the first)."""
    p: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(value) for value in self.p)
        for i, value in enumerate(values, start=1):
            if math.isnan(value) or not 0.0 <= value <= 1.0:
                raise PValueError(f'p-value of H{i} must lie in [0,1], got {value}')
        object.__setattr__(self, 'p', values)

    @classmethod
    def parse(cls, text):
        """Read comma separated or one-per-line p-values."""
        tokens = [token.strip() for token in text.replace('\n', ',').split(',')]
        values = []
        for token in tokens:
            if not token or token.startswith('#'):
                continue
            try:
                values.append(float(token))
            except ValueError:
                raise PValueError(f"not a p-value: '{token}'")
        return cls(tuple(values))

    def __getitem__(self, i):
        return self.p[i - 1]

    def __len__(self):
        return len(self.p)

    def __iter__(self):
        return iter(self.p)


@dataclass(frozen=True)
class LocalTestSpec:
    kind: str
    order: Optional[Tuple[int, ...]] = None
    weights: Optional[Tuple[Tuple[int, float], ...]] = None
    dependence_acknowledged: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LocalTestError(f"unknown local test '{self.kind}'")
        if self.kind == 'fixed_sequence':
            if not self.order:
                raise LocalTestError('fixed_sequence needs an order')
            if len(set(self.order)) != len(self.order):
                raise LocalTestError('fixed_sequence order repeats a hypothesis')
        if self.kind == 'weighted_bonferroni':
            if not self.weights:
                raise LocalTestError('weighted_bonferroni needs weights')
            if any(w <= 0 for _, w in self.weights):
                raise LocalTestError('weights must be strictly positive')
            if abs(math.fsum(w for _, w in self.weights) - 1.0) > WEIGHT_TOLERANCE:
                raise LocalTestError('weights must sum to 1')

    def __str__(self):
        return format_local_test(self)


def parse_local_test(text, dependence_acknowledged=False):
    """Read ``bonferroni``, ``holm``, ``hochberg``, ``fixed:3,1,2`` or ``wbonf:0.5,0.25,0.25``.

    Weighted Bonferroni weights are listed for hypotheses 1, 2, ... in order.
    """
    text = text.strip()
    name, _, arguments = text.partition(':')
    name = name.strip().lower()
    try:
        if name in ('bonferroni', 'holm', 'hochberg') and not arguments:
            return LocalTestSpec(name, dependence_acknowledged=dependence_acknowledged)
        if name in ('fixed', 'fixed_sequence') and arguments:
            order = tuple(int(token) for token in arguments.split(','))
            return LocalTestSpec('fixed_sequence', order=order)
        if name in ('wbonf', 'weighted_bonferroni') and arguments:
            weights = tuple((i, float(token)) for i, token in enumerate(arguments.split(','), start=1))
            return LocalTestSpec('weighted_bonferroni', weights=weights)
    except ValueError as e:
        if isinstance(e, LocalTestError):
            raise
        raise LocalTestError(f"malformed local test '{text}': {e}")
    raise LocalTestError(f"unknown local test '{text}'")


def format_local_test(test):
    if test.kind == 'fixed_sequence':
        return 'fixed:' + ','.join(str(i) for i in test.order)
    if test.kind == 'weighted_bonferroni':
        return 'wbonf:' + ','.join(repr(w) for _, w in test.weights)
    return test.kind


def _ranked(members, p):
    return sorted(members, key=lambda i: (p[i], i))


def _restricted_order(test, members):
    order = [i for i in test.order if i in members]
    if len(order) != len(members):
        missing = sorted(set(members) - set(order))
        raise LocalTestError(f'fixed_sequence order does not cover {missing}')
    return order


def _restricted_weights(test, members):
    weights = dict(test.weights)
    missing = sorted(i for i in members if i not in weights)
    if missing:
        raise LocalTestError(f'no weight given for {missing}')
    total = math.fsum(weights[i] for i in members)
    return {i: weights[i] / total for i in members}


def local_thresholds(test, members, p, alpha):
    """The level each member is compared against.

    Step-wise procedures report the threshold at the member's rank.
    """
    members = tuple(members)
    m = len(members)
    if test.kind == 'bonferroni':
        return {i: alpha / m for i in members}
    if test.kind in ('holm', 'hochberg'):
        return {i: alpha / (m - k) for k, i in enumerate(_ranked(members, p))}
    if test.kind == 'fixed_sequence':
        return {i: alpha for i in members}
    weights = _restricted_weights(test, members)
    return {i: weights[i] * alpha for i in members}


def run_local_test(test, members, p, alpha):
    """Rejection set of ``test`` on ``members`` at level ``alpha``."""
    members = tuple(members)
    if not members:
        raise LocalTestError('a local test needs at least one member')
    if not 0 < alpha <= 1:
        raise LocalTestError(f'alpha must lie in (0,1], got {alpha}')
    m = len(members)

    if test.kind == 'bonferroni':
        return frozenset(i for i in members if p[i] <= alpha / m)

    if test.kind == 'holm':
        rejected = []
        for k, i in enumerate(_ranked(members, p)):
            if p[i] > alpha / (m - k):
                break
            rejected.append(i)
        return frozenset(rejected)

    if test.kind == 'hochberg':
        if not test.dependence_acknowledged:
            raise HochbergDependenceError(
                'hochberg requires acknowledging nonnegative dependence of the test statistics')
        ranked = _ranked(members, p)
        for k in range(m - 1, -1, -1):
            if p[ranked[k]] <= alpha / (m - k):
                return frozenset(ranked[:k + 1])
        return frozenset()

    if test.kind == 'fixed_sequence':
        rejected = []
        for i in _restricted_order(test, members):
            if p[i] > alpha:
                break
            rejected.append(i)
        return frozenset(rejected)

    weights = _restricted_weights(test, members)
    return frozenset(i for i in members if p[i] <= weights[i] * alpha)
