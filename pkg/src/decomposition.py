"""Recursive covering decomposition of a gated family.

A covering step splits a family F on (I, J), where I are the members whose
whole gate set sits inside F and J are the members outside I that gate
them, directly or through other members of I. The rejection regions of I
are covered by those of J, so F breaks into F minus I plus F minus j for
every j in J. Recursion stops at leaves, families with nothing dominated
inside them.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Tuple

from family import gate_ancestors


logger = logging.getLogger(__name__)

Family = Tuple[int, ...]


class DecompositionError(ValueError):
    pass


def as_family(members):
    return tuple(sorted(set(members)))


def format_family(family):
    return '{' + ','.join(str(i) for i in family) + '}'


@dataclass(frozen=True)
class CoveringStep:
    family: Family
    dominated: Family
    dominating: Family
    children: Tuple[Family, ...]


@dataclass(frozen=True)
class DecompositionPlan:
    root: Family
    steps: Dict[Family, CoveringStep]
    leaves: Tuple[Family, ...]
    membership: Dict[int, Tuple[Family, ...]]

    @property
    def top_step(self):
        return self.steps.get(self.root)

    def leaves_of(self, i):
        return self.membership.get(i, ())


def dominated_within(spec, family):
    members = set(family)
    return frozenset(i for i in members if spec.gates_of(i) and spec.gates_of(i) <= members)


def covering_step(spec, family):
    """The canonical covering step of ``family``, or None for a leaf."""
    family = as_family(family)
    dominated = dominated_within(spec, family)
    if not dominated:
        return None
    rest = set(family) - dominated
    dominating = gate_ancestors(spec, dominated) & rest
    if not dominating:
        raise DecompositionError(
            f'no dominating members found for {format_family(as_family(dominated))} in {format_family(family)}')
    dominated = as_family(dominated)
    dominating = as_family(dominating)
    children = [as_family(rest)]
    children += [tuple(i for i in family if i != j) for j in dominating]
    return CoveringStep(family=family, dominated=dominated, dominating=dominating, children=tuple(children))


def decompose(spec):
    root = tuple(spec.ids)
    steps = {}
    leaves = set()
    pending = [root]
    seen = {root}
    while pending:
        family = pending.pop()
        step = covering_step(spec, family)
        if step is None:
            leaves.add(family)
            continue
        logger.debug('split %s on I=%s J=%s', format_family(family),
                     format_family(step.dominated), format_family(step.dominating))
        steps[family] = step
        for child in step.children:
            if child not in seen:
                seen.add(child)
                pending.append(child)

    leaves = tuple(sorted(leaves))
    membership = defaultdict(list)
    for leaf in leaves:
        for i in leaf:
            membership[i].append(leaf)
    logger.debug('%d covering steps, %d leaves', len(steps), len(leaves))
    return DecompositionPlan(
        root=root,
        steps=dict(sorted(steps.items(), key=lambda item: (-len(item[0]), item[0]))),
        leaves=leaves,
        membership={i: tuple(membership[i]) for i in root},
    )


def verify_coverage(spec, step):
    """Check symbolically that the regions of I are covered by those of J.

    Gates are expanded through members of I until they leave I; every
    hypothesis reached that way has to be a member of J.
    """
    dominated = set(step.dominated)
    dominating = set(step.dominating)
    for i in dominated:
        if not spec.gates_of(i):
            return False
        visited = {i}
        frontier = [i]
        while frontier:
            current = frontier.pop()
            for g in spec.gates_of(current):
                if g in dominated:
                    if g not in visited:
                        visited.add(g)
                        frontier.append(g)
                elif g not in dominating:
                    return False
    return True


def plan_to_dict(plan):
    return {
        'leaves': [list(leaf) for leaf in plan.leaves],
        'steps': [
            {
                'family': list(step.family),
                'I': list(step.dominated),
                'J': list(step.dominating),
                'children': [list(child) for child in step.children],
            }
            for step in plan.steps.values()
        ],
    }


def _node(family):
    return '"F' + ','.join(str(i) for i in family) + '"'


def _escape(text):
    return text.replace('\\', '\\\\').replace('"', '\\"')


def export_dot(plan, spec):
    leaves = set(plan.leaves)
    lines = ['digraph covering {', '  rankdir=TB;', '  subgraph cluster_decomposition {',
             '    label="covering decomposition";']
    families = set(plan.steps) | leaves
    for family in sorted(families, key=lambda f: (-len(f), f)):
        label = format_family(family)
        if family in leaves:
            lines.append(f'    {_node(family)} [label="{label}", shape=box, style=filled, fillcolor=lightgrey];')
        else:
            step = plan.steps[family]
            detail = f'I={format_family(step.dominated)} J={format_family(step.dominating)}'
            lines.append(f'    {_node(family)} [label="{label}\\n{detail}", shape=ellipse];')
    for family, step in plan.steps.items():
        for child in step.children:
            lines.append(f'    {_node(family)} -> {_node(child)};')
    lines.append('  }')

    lines += ['  subgraph cluster_gates {', '    label="gates";']
    for i in spec.ids:
        label = spec.label_of(i)
        text = f'H{i}\\n{_escape(label)}' if label else f'H{i}'
        lines.append(f'    "H{i}" [label="{text}", shape=circle];')
    for i in spec.order:
        for g in sorted(spec.gates_of(i)):
            lines.append(f'    "H{g}" -> "H{i}";')
    lines += ['  }', '}']
    return '\n'.join(lines) + '\n'
