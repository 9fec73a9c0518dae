"""Hypothesis families and their gate structure.

A family holds hypotheses 1..n. Every hypothesis may name a gate set: the
hypotheses whose rejection regions jointly cover its own. Gate sets are
OR-gates, a gated hypothesis can only be rejected once one of its gates is.
Serial gatekeeping is written as a chain of singleton gate sets.

Family-spec files are line oriented::

    # parallel gatekeeper
    alpha = 0.05
    hypothesis 1 label="vertebral fractures"
    hypothesis 2 label="breast cancer"
    hypothesis 3 label="non-vertebral fractures" gates=[1,2]
"""
import logging
from collections import namedtuple
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple

import networkx as nx


logger = logging.getLogger(__name__)

HypothesisId = int

Violation = namedtuple('Violation', ['hypothesis', 'rule', 'message'])


class FamilySpecError(ValueError):

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class SpecSyntaxError(FamilySpecError):

    def __init__(self, message, line, column):
        super().__init__(f'{line}:{column}: {message}')
        self.line = line
        self.column = column


@dataclass(frozen=True)
class FamilySpec:
    n: int
    gates: Tuple[FrozenSet[HypothesisId], ...]
    labels: Tuple[Optional[str], ...] = ()
    alpha_default: Optional[float] = None

    @classmethod
    def from_gates(cls, n, gates=None, labels=None, alpha_default=None):
        """Build a spec from a ``{hypothesis: gate ids}`` mapping.

        Nothing is validated here; run :func:`validate` on the result.
        """
        gates = gates or {}
        gate_sets = tuple(frozenset(gates.get(i, ())) for i in range(1, n + 1))
        if labels is None:
            label_tuple = (None,) * n
        elif isinstance(labels, Mapping):
            label_tuple = tuple(labels.get(i) for i in range(1, n + 1))
        else:
            label_tuple = tuple(labels)
        return cls(n=n, gates=gate_sets, labels=label_tuple, alpha_default=alpha_default)

    @property
    def ids(self):
        return range(1, self.n + 1)

    def gates_of(self, i):
        return self.gates[i - 1]

    def label_of(self, i):
        if i - 1 < len(self.labels):
            return self.labels[i - 1]
        return None

    def name_of(self, i):
        label = self.label_of(i)
        return f'H{i} ({label})' if label else f'H{i}'

    @cached_property
    def graph(self):
        return gate_graph(self)

    @cached_property
    def order(self):
        return topological_order(self)


def gate_graph(spec):
    """Directed graph with an edge g -> i for every gate g of i.

    Gate ids outside 1..n and self references are left out so the graph
    can be built for specs that have not been validated yet.
    """
    graph = nx.DiGraph()
    graph.add_nodes_from(spec.ids)
    for i in spec.ids:
        for g in spec.gates_of(i):
            if g != i and 1 <= g <= spec.n:
                graph.add_edge(g, i)
    return graph


def topological_order(spec):
    """Hypothesis ids with every gate ahead of the hypotheses it gates.

    Ties go to the smallest id so the order is reproducible.
    """
    return tuple(nx.lexicographical_topological_sort(spec.graph))


def gate_ancestors(spec, seed):
    """Every hypothesis reachable from ``seed`` by following gates backwards.

    Seed members appear in the result only when another seed member
    (directly or transitively) depends on them.
    """
    graph = spec.graph
    ancestors = set()
    for i in seed:
        ancestors |= nx.ancestors(graph, i)
    return frozenset(ancestors)


def validate(spec):
    violations = []
    if spec.n < 1:
        violations.append(Violation(None, 'n-positive', f'family must hold at least one hypothesis, got n={spec.n}'))
        return violations

    if len(spec.gates) != spec.n:
        violations.append(Violation(None, 'gates', f'expected {spec.n} gate sets, got {len(spec.gates)}'))
        return violations

    if spec.labels and len(spec.labels) != spec.n:
        violations.append(Violation(None, 'labels', f'expected {spec.n} labels, got {len(spec.labels)}'))

    for i in spec.ids:
        for g in sorted(spec.gates_of(i)):
            if g == i:
                violations.append(Violation(i, 'self-gate', f'self-gate at {i}'))
            elif not 1 <= g <= spec.n:
                violations.append(Violation(i, 'unknown-id', f'unknown id {g} in gates of {i}'))

    graph = spec.graph
    if not nx.is_directed_acyclic_graph(graph):
        cycle = [edge[0] for edge in nx.find_cycle(graph)]
        path = ' -> '.join(str(i) for i in cycle + cycle[:1])
        violations.append(Violation(min(cycle), 'cycle', f'gate cycle {path}'))

    if spec.alpha_default is not None and not 0 < spec.alpha_default < 1:
        violations.append(Violation(None, 'alpha', f'alpha must lie in (0,1), got {spec.alpha_default}'))

    return violations


def check(spec):
    """Raise :class:`FamilySpecError` listing every violation of ``spec``."""
    violations = validate(spec)
    if violations:
        raise FamilySpecError('; '.join(v.message for v in violations), violations)
    return spec


class _Scanner:
    """Token reader over a single spec line."""

    def __init__(self, text, line):
        self.text = text
        self.line = line
        self.pos = 0

    def error(self, message):
        return SpecSyntaxError(message, self.line, self.pos + 1)

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos] in ' \t\r':
            self.pos += 1
        if self.pos < len(self.text) and self.text[self.pos] == '#':
            self.pos = len(self.text)

    def at_end(self):
        self.skip()
        return self.pos >= len(self.text)

    def peek_word(self):
        self.skip()
        end = self.pos
        while end < len(self.text) and (self.text[end].isalpha() or self.text[end] == '_'):
            end += 1
        return self.text[self.pos:end]

    def word(self):
        word = self.peek_word()
        if not word:
            raise self.error('expected a keyword')
        self.pos += len(word)
        return word

    def expect(self, literal):
        self.skip()
        if not self.text.startswith(literal, self.pos):
            raise self.error(f"expected '{literal}'")
        self.pos += len(literal)

    def accept(self, literal):
        self.skip()
        if self.text.startswith(literal, self.pos):
            self.pos += len(literal)
            return True
        return False

    def integer(self):
        self.skip()
        start = self.pos
        while self.pos < len(self.text) and '0' <= self.text[self.pos] <= '9':
            self.pos += 1
        if start == self.pos:
            raise self.error('expected an integer')
        return int(self.text[start:self.pos])

    def number(self):
        self.skip()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] in '0123456789.eE+-':
            self.pos += 1
        try:
            return float(self.text[start:self.pos])
        except ValueError:
            self.pos = start
            raise self.error('expected a number')

    def quoted(self):
        self.skip()
        if not self.accept('"'):
            raise self.error('expected a quoted string')
        chars = []
        while self.pos < len(self.text):
            char = self.text[self.pos]
            self.pos += 1
            if char == '\\' and self.pos < len(self.text):
                chars.append(self.text[self.pos])
                self.pos += 1
            elif char == '"':
                return ''.join(chars)
            else:
                chars.append(char)
        raise self.error('unterminated string')


def _parse_hypothesis(scanner):
    scanner.skip()
    column = scanner.pos + 1
    hypothesis = scanner.integer()
    label = None
    gates = None
    while not scanner.at_end():
        key_column = scanner.pos + 1
        key = scanner.word()
        scanner.expect('=')
        if key == 'label' and label is None:
            label = scanner.quoted()
        elif key == 'gates' and gates is None:
            scanner.expect('[')
            gates = [scanner.integer()]
            while scanner.accept(','):
                gates.append(scanner.integer())
            scanner.expect(']')
        else:
            raise SpecSyntaxError(f"unexpected attribute '{key}'", scanner.line, key_column)
    return hypothesis, column, label, gates or []


def parse_family_spec(text):
    """Parse and validate a family-spec document.

    Hypotheses may be declared in any order, their ids must end up
    forming 1..n.
    """
    alpha = None
    declared: Dict[int, Tuple[Optional[str], List[int]]] = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        scanner = _Scanner(line, line_number)
        if scanner.at_end():
            continue
        keyword = scanner.word()
        if keyword == 'alpha':
            if alpha is not None:
                raise scanner.error('duplicate alpha declaration')
            scanner.expect('=')
            alpha = scanner.number()
            if not 0 < alpha < 1:
                raise FamilySpecError(f'{line_number}: alpha must lie in (0,1), got {alpha}')
        elif keyword == 'hypothesis':
            hypothesis, column, label, gates = _parse_hypothesis(scanner)
            if hypothesis < 1:
                raise SpecSyntaxError(f'hypothesis ids start at 1, got {hypothesis}', line_number, column)
            if hypothesis in declared:
                raise SpecSyntaxError(f'duplicate hypothesis id {hypothesis}', line_number, column)
            declared[hypothesis] = (label, gates)
        else:
            scanner.pos -= len(keyword)
            raise scanner.error(f"unknown declaration '{keyword}'")
        if not scanner.at_end():
            raise scanner.error('unexpected trailing text')

    if not declared:
        raise FamilySpecError('family declares no hypotheses')
    n = max(declared)
    missing = sorted(set(range(1, n + 1)) - set(declared))
    if missing:
        raise FamilySpecError(f'hypothesis ids must form 1..{n}; missing {", ".join(map(str, missing))}')

    spec = FamilySpec.from_gates(
        n,
        gates={i: gates for i, (_, gates) in declared.items()},
        labels={i: label for i, (label, _) in declared.items()},
        alpha_default=alpha,
    )
    check(spec)
    logger.debug('parsed family of %d hypotheses', n)
    return spec


def _quote(label):
    return '"' + label.replace('\\', '\\\\').replace('"', '\\"') + '"'


def serialize_family_spec(spec):
    lines = []
    if spec.alpha_default is not None:
        lines.append(f'alpha = {spec.alpha_default!r}')
    for i in spec.ids:
        line = f'hypothesis {i}'
        label = spec.label_of(i)
        if label is not None:
            line += f' label={_quote(label)}'
        gates = sorted(spec.gates_of(i))
        if gates:
            line += ' gates=[' + ','.join(str(g) for g in gates) + ']'
        lines.append(line)
    return '\n'.join(lines) + '\n'
