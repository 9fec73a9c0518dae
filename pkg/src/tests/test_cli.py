import os
import json
import tempfile
from io import StringIO
from unittest import TestCase, mock

import cli
import simulation
from tests.strategies import SPECS_DIRECTORY


PARALLEL_SPEC = os.path.join(SPECS_DIRECTORY, 'parallel.fam')
TIERS_SPEC = os.path.join(SPECS_DIRECTORY, 'tiers.fam')
NULL_SCENARIO = os.path.join(SPECS_DIRECTORY, 'parallel-null.scn')


def run(*args):
    with mock.patch('sys.stdout', new_callable=StringIO) as stdout, \
            mock.patch('sys.stderr', new_callable=StringIO) as stderr:
        code = cli.CommandParser(list(args)).execute()
    return code, stdout.getvalue(), stderr.getvalue()


class TestHelp(TestCase):

    @mock.patch('sys.stdout', new_callable=StringIO)
    def test_generic_help(self, mock_stdout):
        cmd = cli.CommandParser(['help'])
        cmd.execute()
        self.assertEqual(mock_stdout.getvalue(), cli.HELP_GENERIC + '\n')

    @mock.patch('sys.stdout', new_callable=StringIO)
    def test_no_arguments(self, mock_stdout):
        self.assertEqual(cli.CommandParser([]).execute(), cli.EXIT_OK)
        self.assertEqual(mock_stdout.getvalue(), cli.HELP_GENERIC + '\n')

    @mock.patch('sys.stdout', new_callable=StringIO)
    def test_help_decompose(self, mock_stdout):
        cmd = cli.CommandParser(['help', 'decompose'])
        cmd.execute()
        self.assertEqual(mock_stdout.getvalue(), cli.HELP_DECOMPOSE + '\n')

    @mock.patch('sys.stdout', new_callable=StringIO)
    def test_help_verify(self, mock_stdout):
        cmd = cli.CommandParser(['help', 'verify'])
        cmd.execute()
        self.assertEqual(mock_stdout.getvalue(), cli.HELP_VERIFY + '\n')

    @mock.patch('sys.stdout', new_callable=StringIO)
    def test_help_unknown(self, mock_stdout):
        cli.CommandParser(['help', 'install']).execute()
        self.assertIn('no usage text found for "install"', mock_stdout.getvalue())


class CommandParser(TestCase):

    @mock.patch('sys.stdout', new_callable=StringIO)
    def test_version(self, mock_stdout):
        cmd = cli.CommandParser(['version'])
        cmd.execute()
        self.assertEqual(mock_stdout.getvalue(), cli.COVERING_VERSION + '\n')

    @mock.patch('sys.stdout', new_callable=StringIO)
    def test_version_flag(self, mock_stdout):
        cli.CommandParser(['--version']).execute()
        self.assertEqual(mock_stdout.getvalue(), cli.COVERING_VERSION + '\n')

    def test_unknown_command(self):
        code, _, stderr = run('install')
        self.assertEqual(code, cli.EXIT_INVALID)
        self.assertIn('unknown command "install"', stderr)

    def test_missing_spec_file(self):
        code, _, stderr = run('decompose', '--spec', os.path.join(SPECS_DIRECTORY, 'missing.fam'))
        self.assertEqual(code, cli.EXIT_INVALID)
        self.assertTrue(stderr.startswith('covering: error:'))

    def test_missing_required_flag(self):
        code, _, stderr = run('test', '--spec', PARALLEL_SPEC)
        self.assertEqual(code, cli.EXIT_INVALID)
        self.assertIn('covering test', stderr)

    def test_malformed_spec(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'cycle.fam')
            with open(path, 'w', encoding='utf-8') as f:
                f.write('hypothesis 1 gates=[2]\nhypothesis 2 gates=[1]\n')
            code, _, stderr = run('decompose', '--spec', path)
        self.assertEqual(code, cli.EXIT_INVALID)
        self.assertIn('cycle', stderr)


class TestDecompose(TestCase):

    def test_text(self):
        code, stdout, _ = run('decompose', '--spec', PARALLEL_SPEC)
        self.assertEqual(code, cli.EXIT_OK)
        self.assertIn('{1,2,3}  I={3}  J={1,2}  -> {1,2} {2,3} {1,3}', stdout)
        leaves = stdout.split('leaves (3):\n')[1].split()
        self.assertEqual(leaves, ['{1,2}', '{1,3}', '{2,3}'])

    def test_json(self):
        code, stdout, _ = run('decompose', '--spec', TIERS_SPEC, '--format', 'json')
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(len(json.loads(stdout)['leaves']), 9)

    def test_dot(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'plan.dot')
            code, _, _ = run('decompose', '--spec', PARALLEL_SPEC, '--dot', path)
            with open(path, encoding='utf-8') as f:
                dot = f.read()
        self.assertEqual(code, cli.EXIT_OK)
        self.assertTrue(dot.startswith('digraph covering {'))
        self.assertIn('non-vertebral fractures', dot)


class TestTest(TestCase):

    def test_json(self):
        code, stdout, _ = run('test', '--spec', PARALLEL_SPEC, '--p', '0.01,0.5,0.02', '--alpha', '0.05',
                              '--local', 'bonferroni', '--format', 'json')
        self.assertEqual(code, cli.EXIT_OK)
        document = json.loads(stdout)
        self.assertEqual(document['psi'], [True, False, True])
        self.assertEqual(document['explanations'][2]['gate'], {'satisfied_by': 1})

    def test_text_agrees_with_json(self):
        args = ('test', '--spec', TIERS_SPEC, '--p', '0.001,0.001,0.001,0.9,0.001,0.9', '--local', 'holm')
        _, text, _ = run(*args)
        _, document, _ = run(*args, '--format', 'json')
        verdicts = [line.split()[-1] == 'rejected' for line in text.splitlines() if line.startswith('H')]
        self.assertEqual(verdicts, json.loads(document)['psi'])
        self.assertIn('H5 (dose A, tertiary)  p=0.001  rejected', text)
        self.assertIn('    gate: H3', text)

    def test_p_file(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'p.txt')
            with open(path, 'w', encoding='utf-8') as f:
                f.write('0.9\n0.9\n0.001\n')
            code, stdout, _ = run('test', '--spec', PARALLEL_SPEC, '--p-file', path, '--format', 'json')
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(json.loads(stdout)['psi'], [False, False, False])

    def test_alpha_comes_from_the_spec(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'strict.fam')
            with open(path, 'w', encoding='utf-8') as f:
                f.write('alpha = 0.01\nhypothesis 1\nhypothesis 2 gates=[1]\n')
            _, stdout, _ = run('test', '--spec', path, '--p', '0.02,0.02', '--format', 'json')
            _, flagged, _ = run('test', '--spec', path, '--p', '0.02,0.02', '--alpha', '0.05', '--format', 'json')
        self.assertEqual(json.loads(stdout)['alpha'], 0.01)
        self.assertEqual(json.loads(stdout)['psi'], [False, False])
        self.assertEqual(json.loads(flagged)['psi'], [True, True])

    def test_bad_alpha(self):
        for alpha in ('1.5', '0', 'abc'):
            code, _, _ = run('test', '--spec', PARALLEL_SPEC, '--p', '0.01,0.5,0.02', '--alpha', alpha)
            self.assertEqual(code, cli.EXIT_INVALID, msg=alpha)

    def test_wrong_number_of_pvalues(self):
        code, _, stderr = run('test', '--spec', PARALLEL_SPEC, '--p', '0.01,0.5')
        self.assertEqual(code, cli.EXIT_INVALID)
        self.assertIn('expected 3 p-values', stderr)

    def test_hochberg_needs_acknowledgement(self):
        args = ('test', '--spec', PARALLEL_SPEC, '--p', '0.03,0.04,0.01', '--local', 'hochberg', '--format', 'json')
        code, _, stderr = run(*args)
        self.assertEqual(code, cli.EXIT_INVALID)
        self.assertIn('nonnegative dependence', stderr)
        code, stdout, _ = run(*args, '--acknowledge-dependence')
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(json.loads(stdout)['local_test'], 'hochberg')


class TestAdjust(TestCase):

    def test_json(self):
        code, stdout, _ = run('adjust', '--spec', PARALLEL_SPEC, '--p', '0.01,0.5,0.02', '--format', 'json')
        self.assertEqual(code, cli.EXIT_OK)
        adjusted = json.loads(stdout)['adjusted']
        for value, expected in zip(adjusted, (0.02, 1.0, 0.04)):
            self.assertAlmostEqual(value, expected, delta=1e-6)

    def test_text(self):
        _, stdout, _ = run('adjust', '--spec', PARALLEL_SPEC, '--p', '0.01,0.5,0.02', '--tol', '1e-6')
        self.assertIn('H2 (breast cancer)  p=0.5  adjusted=1', stdout)


class TestSimulate(TestCase):

    def test_json_is_reproducible(self):
        args = ('simulate', '--spec', PARALLEL_SPEC, '--scenario', NULL_SCENARIO, '--reps', '300', '--seed', '5',
                '--format', 'json')
        code, first, _ = run(*args)
        _, second, _ = run(*args)
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(first, second)
        document = json.loads(first)
        self.assertEqual((document['reps'], document['seed']), (300, 5))

    def test_text(self):
        code, stdout, _ = run('simulate', '--spec', PARALLEL_SPEC, '--scenario', NULL_SCENARIO, '--reps', '200')
        self.assertEqual(code, cli.EXIT_OK)
        self.assertIn('reps=200  seed=1  alpha=0.05', stdout)

    def test_malformed_scenario_values(self):
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, 'bad.scn')
            for text in ('truth = 1', 'truth = [true, true, true]\nreps = [5]',
                         'truth = [true, true, true]\ncorr = 5', 'truth = [true, true, true]\neffect = "abc"'):
                with open(path, 'w', encoding='utf-8') as f:
                    f.write(text)
                code, _, stderr = run('simulate', '--spec', PARALLEL_SPEC, '--scenario', path)
                self.assertEqual(code, cli.EXIT_INVALID, msg=text)
                self.assertTrue(stderr.startswith('covering: error:'), msg=stderr)
                self.assertEqual(len(stderr.strip().splitlines()), 1, msg=stderr)

    def test_scenario_must_match_family(self):
        code, _, stderr = run('simulate', '--spec', TIERS_SPEC, '--scenario', NULL_SCENARIO, '--reps', '10')
        self.assertEqual(code, cli.EXIT_INVALID)
        self.assertIn('family has 6', stderr)


class TestVerify(TestCase):

    def test_passes(self):
        args = ('verify', '--spec', PARALLEL_SPEC, '--reps', '200', '--format', 'json')
        code, first, _ = run(*args)
        _, second, _ = run(*args)
        self.assertEqual(code, cli.EXIT_OK)
        self.assertEqual(first, second)
        self.assertEqual(len(json.loads(first)['subsets']), 7)

    def test_failure_exit_code(self):
        report = simulation.SubsetReport(
            results=(simulation.SubsetResult(subset=(1,), fwer_hat=0.2, se=0.01, bound=0.08, passed=False),),
            reps=10, seed=0, alpha=0.05, delta_false=6.0)
        with mock.patch('cli.simulation.subsetwise_check', return_value=report) as mock_check:
            code, stdout, _ = run('verify', '--spec', PARALLEL_SPEC, '--rho', '0.5')
        self.assertEqual(code, cli.EXIT_VERIFY_FAILED)
        self.assertIn('FAIL', stdout)
        self.assertEqual(mock_check.call_args.kwargs['delta_false'], simulation.DEFAULT_DELTA_FALSE)
        self.assertEqual(mock_check.call_args.kwargs['correlation'][0][1], 0.5)


class TestCompare(TestCase):

    def test_json(self):
        code, stdout, _ = run('compare', '--spec', PARALLEL_SPEC, '--scenario',
                              os.path.join(SPECS_DIRECTORY, 'parallel-mixed.scn'), '--reps', '200', '--format', 'json')
        self.assertEqual(code, cli.EXIT_OK)
        document = json.loads(stdout)
        self.assertEqual([row['null'] for row in document['hypotheses']], [False, True, False])
        self.assertEqual(document['reps'], 200)


class TestMain(TestCase):

    @mock.patch('cli.colorama.init')
    @mock.patch('cli.multiprocessing.freeze_support')
    def test_freeze_support_comes_first(self, mock_freeze_support, mock_init):
        mock_freeze_support.side_effect = lambda: self.assertFalse(mock_init.called)
        with mock.patch('sys.stdout', new_callable=StringIO) as stdout:
            code = cli.main(['version'])
        self.assertEqual(code, cli.EXIT_OK)
        mock_freeze_support.assert_called_once_with()
        self.assertEqual(stdout.getvalue(), cli.COVERING_VERSION + '\n')
