"""Compose leaf tests into family-wide decisions.

A hypothesis is rejected when every leaf holding it rejects it and, if it
is gated, at least one of its gates has already been rejected. Gates are
settled first by walking the gate graph in topological order, so the gate
condition carries through whole chains.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from decomposition import decompose, format_family
from localtests import LocalTestSpec, PValueError, format_local_test, local_thresholds, run_local_test


logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-9
MAX_BISECTION_STEPS = 60


@dataclass(frozen=True)
class LeafOutcome:
    leaf: Tuple[int, ...]
    rejected: frozenset
    thresholds: Dict[int, float]


@dataclass(frozen=True)
class LeafVerdict:
    leaf: Tuple[int, ...]
    rejected: bool


@dataclass(frozen=True)
class Explanation:
    id: int
    leaves: Tuple[LeafVerdict, ...]
    gated: bool
    satisfied_by: Optional[int]


@dataclass(frozen=True)
class DecisionResult:
    psi: Tuple[bool, ...]
    explanations: Tuple[Explanation, ...]
    alpha: float
    local_test: LocalTestSpec

    @property
    def rejected(self):
        return tuple(i for i, value in enumerate(self.psi, start=1) if value)


@dataclass(frozen=True)
class AdjustedPValues:
    adj: Tuple[float, ...]
    tolerance: float


def _check_dimension(spec, p):
    if len(p) != spec.n:
        raise PValueError(f'expected {spec.n} p-values, got {len(p)}')


def _compose(spec, plan, rejected_by_leaf):
    """psi and the smallest satisfied gate of every hypothesis."""
    psi = [False] * (spec.n + 1)
    satisfied = [None] * (spec.n + 1)
    for i in spec.order:
        gates = spec.gates_of(i)
        if gates:
            satisfied[i] = next((g for g in sorted(gates) if psi[g]), None)
        gate_open = not gates or satisfied[i] is not None
        psi[i] = gate_open and all(i in rejected_by_leaf[leaf] for leaf in plan.leaves_of(i))
    return tuple(psi[1:]), tuple(satisfied[1:])


def evaluate_leaves(plan, test, p, alpha):
    outcomes = {}
    for leaf in plan.leaves:
        outcomes[leaf] = LeafOutcome(
            leaf=leaf,
            rejected=run_local_test(test, leaf, p, alpha),
            thresholds=local_thresholds(test, leaf, p, alpha),
        )
    return outcomes


def combine(spec, plan, outcomes, alpha=None, test=None):
    if set(outcomes) != set(plan.leaves):
        raise ValueError('leaf outcomes do not match the decomposition leaves')
    rejected_by_leaf = {leaf: outcome.rejected for leaf, outcome in outcomes.items()}
    psi, satisfied = _compose(spec, plan, rejected_by_leaf)
    explanations = []
    for i in spec.ids:
        verdicts = tuple(LeafVerdict(leaf, i in rejected_by_leaf[leaf]) for leaf in plan.leaves_of(i))
        explanations.append(Explanation(id=i, leaves=verdicts, gated=bool(spec.gates_of(i)),
                                        satisfied_by=satisfied[i - 1]))
    return DecisionResult(psi=psi, explanations=tuple(explanations), alpha=alpha, local_test=test)


def rejection_vector(spec, plan, test, p, alpha):
    """psi alone, without leaf diagnostics."""
    rejected_by_leaf = {leaf: run_local_test(test, leaf, p, alpha) for leaf in plan.leaves}
    return _compose(spec, plan, rejected_by_leaf)[0]


def test_family(spec, p, alpha, test, plan=None):
    _check_dimension(spec, p)
    plan = plan or decompose(spec)
    outcomes = evaluate_leaves(plan, test, p, alpha)
    return combine(spec, plan, outcomes, alpha=alpha, test=test)


def adjusted_pvalues(spec, p, test, tol=DEFAULT_TOLERANCE, plan=None):
    """Smallest level at which each hypothesis is rejected, by bisection.

    The upper end of the final bracket is reported, so ``adj[i] <= alpha``
    always means the hypothesis is rejected at ``alpha``.
    """
    if tol <= 0:
        raise ValueError(f'tolerance must be positive, got {tol}')
    _check_dimension(spec, p)
    plan = plan or decompose(spec)
    cache = {}

    def psi_at(alpha):
        if alpha not in cache:
            cache[alpha] = rejection_vector(spec, plan, test, p, alpha)
        return cache[alpha]

    adjusted = []
    for i in spec.ids:
        if not psi_at(1.0)[i - 1]:
            adjusted.append(1.0)
            continue
        low, high = 0.0, 1.0
        for _ in range(MAX_BISECTION_STEPS):
            if high - low <= tol:
                break
            middle = (low + high) / 2
            if psi_at(middle)[i - 1]:
                high = middle
            else:
                low = middle
        logger.debug('H%d adjusted p bracket [%g, %g]', i, low, high)
        adjusted.append(high)
    return AdjustedPValues(adj=tuple(adjusted), tolerance=tol)


def decision_to_dict(result):
    explanations = []
    for explanation in result.explanations:
        explanations.append({
            'id': explanation.id,
            'leaves': [{'leaf': list(v.leaf), 'rejected': v.rejected} for v in explanation.leaves],
            'gate': {'satisfied_by': explanation.satisfied_by} if explanation.gated else None,
        })
    return {
        'alpha': result.alpha,
        'local_test': format_local_test(result.local_test) if result.local_test else None,
        'psi': list(result.psi),
        'explanations': explanations,
    }


def adjusted_to_dict(adjusted, p=None):
    document = {'adjusted': list(adjusted.adj), 'tolerance': adjusted.tolerance}
    if p is not None:
        document['p'] = list(p)
    return document


def describe_leaves(explanation):
    return ' '.join(f'{format_family(v.leaf)}:{"R" if v.rejected else "-"}' for v in explanation.leaves)
