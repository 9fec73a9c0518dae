#!/usr/bin/env python
import sys
import json
import logging
import argparse
import multiprocessing
import colorama
from colorama import Fore, Style

import decomposition
import engine
import family
import localtests
import simulation


VERSION = '0.0.0'
GIT_COMMIT = 'dev'
PYTHON_VERSION = f'{sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro}'
DEFAULT_ALPHA = 0.05
DEFAULT_LOCAL_TEST = 'bonferroni'
EXIT_OK = 0
EXIT_INVALID = 2
EXIT_VERIFY_FAILED = 3
COMMANDS = ('decompose', 'test', 'adjust', 'simulate', 'verify', 'compare', 'help', 'version')


class UsageError(ValueError):
    pass


class ArgumentParser(argparse.ArgumentParser):

    def error(self, message):
        raise UsageError(f'{self.prog}: {message}')


def read_text(path):
    with open(path, 'r', encoding='utf-8') as f:
        return f.read()


def write_text(path, text):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)


def configure_logging(verbose):
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')


COVERING_VERSION = f'covering/{VERSION} (Python {PYTHON_VERSION}); git {GIT_COMMIT}'

HELP_GENERIC = f"""{COVERING_VERSION}
covering <command> [<args>]\n
Covering tests a family of gated null hypotheses. It:
* splits the family into overlapping leaf sub-families
* runs an alpha-level multiple test on every leaf
* rejects a hypothesis when all of its leaves reject it and a gate is open\n
Commands
--------\n
* covering decompose:
    Show the covering decomposition of a family.
* covering test:
    Decide every hypothesis for a vector of p-values.
* covering adjust:
    Compute adjusted p-values.
* covering simulate:
    Estimate the familywise error rate of a scenario.
* covering verify:
    Check the error rate on every subset of true nulls.
* covering compare:
    Compare rejection rates with closed testing of the whole family.
* covering version:
    Report the version number."""

HELP_DECOMPOSE = """covering decompose --spec FILE [options]\n
Split the family into leaf sub-families and list the covering steps.\n
Options:\n
* --dot PATH:
    Also write the decomposition and the gate graph as a Graphviz file.
* --format text|json:
    Output format, text by default."""

HELP_TEST = """covering test --spec FILE (--p LIST | --p-file FILE) [options]\n
Decide every hypothesis of the family.\n
Options:\n
* --alpha LEVEL:
    Significance level; defaults to the spec's alpha, then 0.05.
* --local TEST:
    bonferroni (default), holm, hochberg, fixed:3,1,2 or wbonf:0.5,0.25,0.25.
* --acknowledge-dependence:
    Accept hochberg, valid only under nonnegative dependence.
* --format text|json:
    Output format, text by default."""

HELP_ADJUST = """covering adjust --spec FILE (--p LIST | --p-file FILE) [options]\n
Smallest level at which the whole procedure rejects each hypothesis.\n
Options:\n
* --local TEST, --acknowledge-dependence:
    As for covering test.
* --tol TOL:
    Bisection tolerance, 1e-9 by default.
* --format text|json:
    Output format, text by default."""

HELP_SIMULATE = """covering simulate --spec FILE --scenario FILE [options]\n
Estimate the familywise error rate by Monte Carlo.\n
Options:\n
* --seed SEED, --reps REPS, --alpha LEVEL:
    Override the scenario; the seed defaults to 0.
* --local TEST, --acknowledge-dependence:
    As for covering test.
* --workers N:
    Split repetitions over N processes; results do not change.
* --format text|json:
    Output format, text by default."""

HELP_VERIFY = """covering verify --spec FILE [options]\n
Estimate the error rate for every nonempty subset of true nulls, with the
other hypotheses false. Exits with 3 when a subset exceeds alpha + 3 se.\n
Options:\n
* --delta-false DELTA:
    Mean shift of false nulls, 6 by default.
* --rho RHO:
    Exchangeable correlation of the test statistics, 0 by default.
* --seed SEED, --reps REPS, --alpha LEVEL, --workers N:
    As for covering simulate.
* --local TEST, --format text|json:
    As for covering test."""

HELP_COMPARE = """covering compare --spec FILE --scenario FILE [options]\n
Per-hypothesis rejection rates of the covering procedure and of closed
testing on the whole family, from the same draws.\n
Options:\n
* --seed SEED, --reps REPS, --alpha LEVEL, --workers N:
    As for covering simulate.
* --local TEST, --format text|json:
    As for covering test."""

HELP_VERSION = 'covering version\n\nReport the version number.'


class CommandParser:

    def __init__(self, args):
        self.args = args
        self.color = sys.stdout.isatty()

    def execute(self):
        if not self.args:
            self.help()
            return EXIT_OK

        command = self.args[0].replace('-', '_')
        if command == '__help':
            command = 'help'
        if command == '__version':
            command = 'version'
        args = self.args[1:]

        # do not process if command does not exist
        if command not in COMMANDS:
            print(f"""covering: error: unknown command "{self.args[0]}"\nRun 'covering --help' for usage.""",
                  file=sys.stderr)
            return EXIT_INVALID

        try:
            return getattr(self, command)(*args) or EXIT_OK
        except SystemExit as e:
            return e.code or EXIT_OK
        except (ValueError, OSError) as e:
            print(f'covering: error: {e}', file=sys.stderr)
            return EXIT_INVALID

    # argument handling

    def parser(self, command, p_values=False, local=False, simulation_flags=False):
        parser = ArgumentParser(prog=f'covering {command}', add_help=True)
        parser.add_argument('--spec', required=True)
        parser.add_argument('--format', choices=('text', 'json'), default='text')
        parser.add_argument('--verbose', '-v', action='store_true')
        if p_values:
            group = parser.add_mutually_exclusive_group(required=True)
            group.add_argument('--p')
            group.add_argument('--p-file')
        if local:
            parser.add_argument('--alpha', type=float)
            parser.add_argument('--local', default=DEFAULT_LOCAL_TEST)
            parser.add_argument('--acknowledge-dependence', action='store_true')
        if simulation_flags:
            parser.add_argument('--seed', type=int)
            parser.add_argument('--reps', type=int)
            parser.add_argument('--workers', type=int, default=1)
        return parser

    def parse(self, parser, args):
        options = parser.parse_args(list(args))
        configure_logging(options.verbose)
        return options

    def load_spec(self, options):
        return family.parse_family_spec(read_text(options.spec))

    def load_pvalues(self, options, spec):
        text = options.p if options.p is not None else read_text(options.p_file)
        p = localtests.PValueVector.parse(text)
        if len(p) != spec.n:
            raise localtests.PValueError(f'expected {spec.n} p-values, got {len(p)}')
        return p

    def load_test(self, options):
        return localtests.parse_local_test(options.local, dependence_acknowledged=options.acknowledge_dependence)

    def resolve_alpha(self, *candidates):
        alpha = next((a for a in candidates if a is not None), DEFAULT_ALPHA)
        if not 0 < alpha < 1:
            raise UsageError(f'alpha must lie in (0,1), got {alpha}')
        return alpha

    def load_scenario(self, options, spec):
        scenario = simulation.parse_scenario(read_text(options.scenario), n=spec.n)
        alpha = self.resolve_alpha(options.alpha, scenario.alpha)
        return simulation.ScenarioConfig(
            truth=scenario.truth, effect=scenario.effect, correlation=scenario.correlation,
            reps=options.reps if options.reps is not None else scenario.reps,
            seed=options.seed if options.seed is not None else scenario.seed,
            alpha=alpha,
        )

    # output

    def style(self, text, *codes):
        if not self.color:
            return text
        return ''.join(codes) + text + Style.RESET_ALL

    def emit_json(self, document):
        print(json.dumps(document, indent=2))

    def verdict(self, rejected):
        return self.style('rejected', Fore.GREEN, Style.BRIGHT) if rejected else self.style('retained', Fore.WHITE)

    # commands

    def help(self, *args):
        module = sys.modules[__name__]
        arg = args[0] if args else None
        if arg is None:
            print(HELP_GENERIC)
        else:
            help_text = 'HELP_%s' % arg.upper().replace('-', '_')
            if not hasattr(module, help_text):
                print(f'Sorry, no usage text found for "{arg}"')
            else:
                print(getattr(module, help_text))

    def version(self, *args):
        print(COVERING_VERSION)

    def decompose(self, *args):
        parser = self.parser('decompose')
        parser.add_argument('--dot')
        options = self.parse(parser, args)
        spec = self.load_spec(options)
        plan = decomposition.decompose(spec)
        if options.dot:
            write_text(options.dot, decomposition.export_dot(plan, spec))

        if options.format == 'json':
            return self.emit_json(decomposition.plan_to_dict(plan))

        fmt = decomposition.format_family
        print(self.style(f'family of {spec.n} hypotheses', Style.BRIGHT))
        if plan.steps:
            print('covering steps:')
            for step in plan.steps.values():
                children = ' '.join(fmt(child) for child in step.children)
                print(f'    {fmt(step.family)}  I={fmt(step.dominated)}  J={fmt(step.dominating)}  -> {children}')
        print(f'leaves ({len(plan.leaves)}):')
        for leaf in plan.leaves:
            print(self.style(f'    {fmt(leaf)}', Fore.CYAN))

    def test(self, *args):
        options = self.parse(self.parser('test', p_values=True, local=True), args)
        spec = self.load_spec(options)
        p = self.load_pvalues(options, spec)
        alpha = self.resolve_alpha(options.alpha, spec.alpha_default)
        result = engine.test_family(spec, p, alpha, self.load_test(options))

        if options.format == 'json':
            return self.emit_json(engine.decision_to_dict(result))

        print(self.style(f'alpha={alpha}  local test={localtests.format_local_test(result.local_test)}', Style.BRIGHT))
        for explanation, psi in zip(result.explanations, result.psi):
            i = explanation.id
            print(f'{spec.name_of(i)}  p={p[i]:g}  {self.verdict(psi)}')
            print(f'    leaves: {engine.describe_leaves(explanation)}')
            if explanation.gated:
                gate = f'H{explanation.satisfied_by}' if explanation.satisfied_by else 'closed'
                print(f'    gate: {gate}')

    def adjust(self, *args):
        parser = self.parser('adjust', p_values=True, local=True)
        parser.add_argument('--tol', type=float, default=engine.DEFAULT_TOLERANCE)
        options = self.parse(parser, args)
        spec = self.load_spec(options)
        p = self.load_pvalues(options, spec)
        adjusted = engine.adjusted_pvalues(spec, p, self.load_test(options), tol=options.tol)

        if options.format == 'json':
            return self.emit_json(engine.adjusted_to_dict(adjusted, p))

        for i in spec.ids:
            print(f'{spec.name_of(i)}  p={p[i]:g}  adjusted={adjusted.adj[i - 1]:.6g}')

    def simulate(self, *args):
        parser = self.parser('simulate', local=True, simulation_flags=True)
        parser.add_argument('--scenario', required=True)
        options = self.parse(parser, args)
        spec = self.load_spec(options)
        scenario = self.load_scenario(options, spec)
        report = simulation.estimate_fwer(spec, scenario, self.load_test(options), workers=options.workers)

        if options.format == 'json':
            return self.emit_json(simulation.fwer_to_dict(report))

        status = self.style('within', Fore.GREEN) if report.passed else self.style('above', Fore.RED, Style.BRIGHT)
        print(self.style(f'reps={report.reps}  seed={report.seed}  alpha={report.alpha}', Style.BRIGHT))
        print(f'FWER {report.fwer_hat:.5f}  se {report.se:.5f}  {status} alpha + 3 se = {report.bound:.5f}')
        for i in spec.ids:
            kind = 'null ' if scenario.truth[i - 1] else 'false'
            print(f'    {spec.name_of(i)}  {kind}  rejection rate {report.per_hypothesis_rejection_rate[i - 1]:.5f}')

    def verify(self, *args):
        parser = self.parser('verify', local=True, simulation_flags=True)
        parser.add_argument('--delta-false', type=float, default=simulation.DEFAULT_DELTA_FALSE)
        parser.add_argument('--rho', type=float, default=0.0)
        options = self.parse(parser, args)
        spec = self.load_spec(options)
        alpha = self.resolve_alpha(options.alpha, spec.alpha_default)
        report = simulation.subsetwise_check(
            spec, self.load_test(options), alpha=alpha,
            reps=options.reps if options.reps is not None else simulation.DEFAULT_REPS,
            delta_false=options.delta_false,
            correlation=simulation.exchangeable_correlation(spec.n, options.rho),
            seed=options.seed if options.seed is not None else simulation.DEFAULT_SEED,
            workers=options.workers,
        )

        if options.format == 'json':
            self.emit_json(simulation.subsetwise_to_dict(report))
        else:
            print(self.style(f'reps={report.reps}  seed={report.seed}  alpha={report.alpha}  '
                             f'delta_false={report.delta_false}', Style.BRIGHT))
            for result in report.results:
                flag = self.style('PASS', Fore.GREEN) if result.passed else self.style('FAIL', Fore.RED, Style.BRIGHT)
                subset = decomposition.format_family(result.subset)
                print(f'    {subset:<20} {result.fwer_hat:.5f}  bound {result.bound:.5f}  {flag}')
        return EXIT_OK if report.passed else EXIT_VERIFY_FAILED

    def compare(self, *args):
        parser = self.parser('compare', local=True, simulation_flags=True)
        parser.add_argument('--scenario', required=True)
        options = self.parse(parser, args)
        spec = self.load_spec(options)
        scenario = self.load_scenario(options, spec)
        report = simulation.power_report(spec, scenario, self.load_test(options), workers=options.workers)

        if options.format == 'json':
            return self.emit_json(simulation.power_to_dict(report))

        print(self.style(f'reps={scenario.reps}  seed={scenario.seed}  alpha={scenario.alpha}', Style.BRIGHT))
        print(f'    {"hypothesis":<24} {"":5}  {"covering":>8}  {"closure":>8}')
        for row in report.rows:
            kind = 'null ' if row.null else 'false'
            print(f'    {spec.name_of(row.id):<24} {kind}  {row.covering_rate:8.5f}  {row.closure_rate:8.5f}')
        print(f'    {"FWER":<24} {"":5}  {report.covering.fwer_hat:8.5f}  {report.closure.fwer_hat:8.5f}')
        print(f'    {"any false null rejected":<24} {"":5}  '
              f'{report.covering_any_false:8.5f}  {report.closure_any_false:8.5f}')


def main(argv=None):
    # pool workers of the frozen exe start here and must not parse argv
    multiprocessing.freeze_support()
    colorama.init()
    command_parser = CommandParser(sys.argv[1:] if argv is None else argv)
    return command_parser.execute()


if __name__ == '__main__':
    sys.exit(main())
