import unittest
import io
import json
import os
import tempfile
from contextlib import redirect_stdout, redirect_stderr
from os.path import join, isfile
from unittest import mock

import pandas as pd

from asynccredit.utils.filesystem import OUTDIR_ENV
from asynccredit.utils.report import read_json, read_metrics
from asynccredit.config_loader import load_config
from scripts.async_credit import main, parse_argument, build_config, trace_env_overrides

SMALL_RUN = ['--disable_verbose', '--no_progress', '--train.total_timesteps=24', '--train.batch_size=4',
             '--train.test_interval=12', '--train.test_episodes=2', '--agent.hidden_dim=8',
             '--mixer.hypernet_hidden=8', '--mixer.mlp_hidden=4']

def run_main(argv):
    '''exit code, stdout, stderr of one console invocation'''
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(argv)
    return(code, out.getvalue(), err.getvalue())

class TestConsole(unittest.TestCase):
    '''Tests exit codes and outputs of the console entry point
    '''
    def setUp(self):
        self.dir = tempfile.mkdtemp()
        patcher = mock.patch.dict(os.environ)
        patcher.start()
        self.addCleanup(patcher.stop)
        os.environ.pop(OUTDIR_ENV, None)

    def test_missing_subcommand(self):
        code, _, err = run_main([])
        self.assertEqual(code, 2)
        self.assertTrue(err.startswith('error: usage:'))

    def test_unknown_argument(self):
        code, _, err = run_main(['train', 'surprise'])
        self.assertEqual(code, 2)
        self.assertIn('surprise', err)

    def test_bad_choice(self):
        self.assertEqual(run_main(['train', '--mixer', 'qplex'])[0], 2)

    def test_missing_config(self):
        path = join(self.dir, 'absent.yaml')
        code, _, err = run_main(['train', '-c', path])
        self.assertEqual(code, 2)
        self.assertIn(path, err)

    def test_unknown_config_key(self):
        code, _, err = run_main(['train', '--train.batch_sz=4'])
        self.assertEqual(code, 2)
        self.assertIn('batch_sz', err)

    def test_config_value_of_wrong_type(self):
        code, _, err = run_main(['train', '-o', self.dir, '--train.batch_size=abc'] + SMALL_RUN[:2])
        self.assertEqual(code, 2)
        self.assertEqual(len(err.splitlines()), 1)
        self.assertTrue(err.startswith('error: config:'))
        self.assertIn('batch_size', err)

    def test_missing_checkpoint(self):
        code, _, err = run_main(['eval', '--checkpoint', join(self.dir, 'absent.ckpt')])
        self.assertEqual(code, 2)
        self.assertTrue(err.startswith('error: checkpoint:'))

    def test_verify_quick(self):
        report_path = join(self.dir, 'report.json')
        code, out, _ = run_main(['verify', '--quick', '--disable_verbose', '--report', report_path])
        report = read_json(report_path)
        self.assertEqual(json.loads(out)['passed'], report['passed'])
        self.assertGreaterEqual(len(report['tests']), 6)
        self.assertEqual(code, 0 if report['passed'] else 1)
        for result in report['tests']:
            self.assertIn('max_deviation', result)

    def test_train_eval_trace(self):
        code, _, _ = run_main(['train', '-o', self.dir, '--run_id', 'small'] + SMALL_RUN)
        self.assertEqual(code, 0)
        run_dir = join(self.dir, 'small')
        manifest = read_json(join(run_dir, 'manifest.json'))
        self.assertIsNotNone(manifest['finished'])
        self.assertGreaterEqual(len(read_metrics(join(run_dir, 'metrics.csv'))), 2)
        checkpoint = join(run_dir, 'checkpoints', 'final.ckpt')
        self.assertTrue(isfile(checkpoint))

        code, out, _ = run_main(['eval', '--checkpoint', checkpoint, '--episodes', '3'])
        self.assertEqual(code, 0)
        result = json.loads(out)
        self.assertEqual(len(result['returns']), 3)
        self.assertEqual(result['std'], 0.0)

        code, _, _ = run_main(['trace', '--checkpoint', checkpoint, '--episodes', '2', '--disable_verbose'])
        self.assertEqual(code, 0)
        frame = pd.read_csv(join(run_dir, 'traces', 'trace.csv'))
        # two steps per matrix episode, four slots per step
        self.assertEqual(len(frame), 2 * 2 * 4)
        self.assertEqual(sorted(frame['slot_id'].unique().tolist()), [0, 1, 2, 3])

    def test_rerun_from_manifest_keeps_original(self):
        code, _, _ = run_main(['train', '-o', self.dir, '--run_id', 'small'] + SMALL_RUN)
        self.assertEqual(code, 0)
        run_dir = join(self.dir, 'small')
        marker = join(run_dir, 'MARKER')
        open(marker, 'w').close()
        code, _, _ = run_main(['train', '-c', join(run_dir, 'manifest.json')])
        self.assertEqual(code, 0)
        self.assertTrue(isfile(marker))
        rerun_dir = join(self.dir, 'small-2')
        self.assertTrue(isfile(join(rerun_dir, 'manifest.json')))
        with open(join(run_dir, 'metrics.csv'), 'rb') as first, open(join(rerun_dir, 'metrics.csv'), 'rb') as second:
            self.assertEqual(first.read(), second.read())

    def test_trace_env_is_diffed_against_checkpoint(self):
        trained = load_config(overrides=[('env', 'name', 'gridworld'), ('env', 'episode_limit', 6)]).as_dict()
        params, extra = parse_argument(['trace', '--checkpoint', 'run.ckpt'])
        self.assertEqual(trace_env_overrides(build_config(params, extra, base=trained), trained), {})
        params, extra = parse_argument(['trace', '--checkpoint', 'run.ckpt', '--env', 'matrix'])
        self.assertEqual(trace_env_overrides(build_config(params, extra, base=trained), trained), {'name': 'matrix'})
        params, extra = parse_argument(['trace', '--checkpoint', 'run.ckpt', '--env.episode_limit=3'])
        self.assertEqual(trace_env_overrides(build_config(params, extra, base=trained), trained), {'episode_limit': 3})
