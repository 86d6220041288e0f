'''Run asynccredit on console environment

Subcommands: train, eval, verify, ablate, trace. Any "--section.key=value" argument overrides
the configuration. Exit codes: 0 ok, 1 failed verification or training failure, 2 usage/config error.
'''

import argparse
import json
import sys
from os.path import join, dirname, isdir

from asynccredit import __version__
from asynccredit.config_loader import load_config, validate_config
from asynccredit.exceptions import (AsyncCreditError, ConfigError, CheckpointError, UsageError, NonFiniteError,
                                    BudgetExceededError, ConvergenceError)
from asynccredit.logger import RunLogger
from asynccredit.main import Experiment, evaluate_checkpoint, trace_checkpoint, run_ablation, ABLATION_AXES
from asynccredit.utils.checkpoint import load_checkpoint
from asynccredit.utils.report import verify_report_json
from asynccredit.verify import run_verification

class ArgumentParser(argparse.ArgumentParser):
    '''argparse exits on its own; raise instead so every failure goes through one error line'''
    def error(self, message):
        raise UsageError(message)

def add_config_arguments(parser):
    parser.add_argument(
        '-c', '--config',
        help='Path to a YAML config file (or the manifest.json of an earlier run)',
        default=None, required=False)
    parser.add_argument(
        '--env',
        help='Environment {matrix, gridworld, gridworld_large}',
        default=None, required=False)
    parser.add_argument(
        '--mixer',
        help='Mixer family {additive, monotonic, mvd}',
        default=None, choices=['additive', 'monotonic', 'mvd'], required=False)
    parser.add_argument(
        '--wrapper',
        help='Environment wrapper {vsp, pad_blank, pad_recent, discard, none}',
        default=None, choices=['vsp', 'pad_blank', 'pad_recent', 'discard', 'none'], required=False)
    parser.add_argument(
        '--head_mode',
        help='MVD head combination {direct, softmax, mlp}',
        default=None, choices=['direct', 'softmax', 'mlp'], required=False)
    parser.add_argument(
        '--order',
        help='MVD interaction order K',
        default=None, type=int, required=False)
    parser.add_argument(
        '--seed',
        help='Randomization seed',
        default=None, type=int, required=False)
    parser.add_argument(
        '-o', '--out_dir',
        help='Directory path to store results',
        default=None, required=False)
    parser.add_argument(
        '--run_id',
        help='Run directory name under the output directory',
        default=None, required=False)
    parser.add_argument(
        '--disable_verbose',
        help='Disable verbose',
        action='store_true', required=False)
    parser.add_argument(
        '--no_progress',
        help='Turn off the progress bar over environment steps',
        dest='no_progress', default=False,
        action='store_true', required=False)

def parse_argument(argv):
    parser = ArgumentParser(
        description='asynccredit: asynchronous multi-agent credit assignment version ' + __version__,
    )
    parser.add_argument(
        '--version',
        action='version',
        version=__version__)
    subparsers = parser.add_subparsers(dest='command')

    train = subparsers.add_parser('train', help='Train and evaluate one configuration')
    add_config_arguments(train)

    evaluate = subparsers.add_parser('eval', help='Greedy evaluation of a checkpoint (JSON on stdout)')
    evaluate.add_argument('--checkpoint', help='Path to a .ckpt file', required=True)
    evaluate.add_argument('--episodes', help='# evaluation episodes', default=None, type=int, required=False)

    verify = subparsers.add_parser('verify', help='Run the oracle and gradient-check suite')
    add_config_arguments(verify)
    verify.add_argument('--quick', help='Fewer random instances per test group', action='store_true', required=False)
    verify.add_argument('--report', help='Path of the JSON report (also printed on stdout)', default=None,
                        required=False)

    ablate = subparsers.add_parser('ablate', help='Train every value of one axis over the configured seeds')
    add_config_arguments(ablate)
    ablate.add_argument('--axis', help='Ablation axis', choices=sorted(ABLATION_AXES), required=True)

    trace = subparsers.add_parser('trace', help='Credit-trace CSV of greedy episodes from a checkpoint')
    add_config_arguments(trace)
    trace.add_argument('--checkpoint', help='Path to a .ckpt file', required=True)
    trace.add_argument('--episodes', help='# greedy episodes', default=1, type=int, required=False)
    trace.add_argument('--trace_file', help='Output CSV path (default: traces/trace.csv of the run)',
                       default=None, required=False)

    params, extra = parser.parse_known_args(argv)
    if params.command is None:
        raise UsageError('a subcommand is required: train, eval, verify, ablate or trace')
    for item in extra:
        if not item.startswith('--') or '=' not in item or '.' not in item.split('=', 1)[0]:
            raise UsageError('unrecognized argument %s' % item)
    return(params, extra)

def build_config(params, extra, base=None):
    '''Config file, then the named flags, then --section.key=value overrides; [base] replaces the defaults'''
    flags = [('env', 'name', getattr(params, 'env', None)),
             ('mixer', 'family', getattr(params, 'mixer', None)),
             ('wrapper', 'mode', getattr(params, 'wrapper', None)),
             ('mixer', 'head_mode', getattr(params, 'head_mode', None)),
             ('mixer', 'order', getattr(params, 'order', None)),
             ('train', 'seed', getattr(params, 'seed', None)),
             ('output', 'dir', getattr(params, 'out_dir', None)),
             ('output', 'run_id', getattr(params, 'run_id', None))]
    overrides = [item for item in flags if item[2] is not None]
    if getattr(params, 'disable_verbose', False):
        overrides.append(('output', 'verbose', False))
    if getattr(params, 'no_progress', False):
        overrides.append(('output', 'no_progress', True))
    return(validate_config(load_config(getattr(params, 'config', None), overrides + list(extra), base)))

def cmd_train(params, extra):
    Experiment(build_config(params, extra)).run()
    return(0)

def cmd_eval(params, extra):
    if extra:
        raise UsageError('eval takes no config overrides')
    print(json.dumps(evaluate_checkpoint(params.checkpoint, params.episodes), indent=2, sort_keys=True))
    return(0)

def cmd_verify(params, extra):
    config = build_config(params, extra)
    logger = RunLogger(name='verify', config=config, log_config=False)
    results = run_verification(config, quick=params.quick, logger=logger)
    report = verify_report_json(results)
    if params.report:
        with open(params.report, 'w') as file:
            file.write(report + '\n')
    print(report)
    failed = [result['test'] for result in results if not result['passed']]
    if failed:
        print('error: verification: failed %s' % ', '.join(failed), file = sys.stderr)
        return(1)
    return(0)

def cmd_ablate(params, extra):
    run_ablation(params.axis, build_config(params, extra))
    return(0)

def default_trace_file(checkpoint):
    run_traces = join(dirname(dirname(checkpoint)), 'traces')
    return(join(run_traces, 'trace.csv') if isdir(run_traces) else join(dirname(checkpoint) or '.', 'trace.csv'))

def trace_env_overrides(config, checkpoint_config):
    '''env entries of [config] that differ from the config the checkpoint was trained with'''
    trained = checkpoint_config.get('env', {})
    return({key: value for key, value in config.env.items() if key not in trained or value != trained[key]})

def cmd_trace(params, extra):
    _, meta = load_checkpoint(params.checkpoint)
    config = build_config(params, extra, base=meta['config'])
    env_conf = trace_env_overrides(config, meta['config'])
    out_path = params.trace_file or default_trace_file(params.checkpoint)
    frame = trace_checkpoint(params.checkpoint, out_path, params.episodes, env_conf or None)
    if config.output['verbose']:
        print('Wrote %d trace rows to %s' % (len(frame), out_path), file = sys.stderr)
    return(0)

COMMANDS = {'train': cmd_train, 'eval': cmd_eval, 'verify': cmd_verify, 'ablate': cmd_ablate, 'trace': cmd_trace}

def _fail(kind, err, code):
    detail = str(err).replace('\n', ' ')
    print('error: %s: %s' % (kind, detail), file = sys.stderr)
    return(code)

def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        params, extra = parse_argument(argv)
        return(COMMANDS[params.command](params, extra))
    except UsageError as err:
        return(_fail('usage', err, 2))
    except ConfigError as err:
        return(_fail('config', err, 2))
    except CheckpointError as err:
        return(_fail('checkpoint', err, 2))
    except NonFiniteError as err:
        return(_fail('nonfinite', err, 1))
    except (BudgetExceededError, ConvergenceError) as err:
        return(_fail('oracle', err, 1))
    except AsyncCreditError as err:
        return(_fail(type(err).__name__, err, 1))
    except (IOError, OSError) as err:
        return(_fail('io', err, 2))

if __name__ == "__main__":
    sys.exit(main())
