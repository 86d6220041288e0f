from .config_loader import config_from_dict, validate_config
from .logger import RunLogger, get_version
from .learner import Learner, epsilon_at
from .utils.envs import make_env
from .utils.filesystem import prepare_run_dir, output_root, create_dir
from .utils.report import MetricsWriter, write_json, write_trace, ablation_summary

import copy
import datetime
import time
from os.path import join

from tqdm import tqdm

ABLATION_AXES = {
    'proxy': ('wrapper', 'mode', ['vsp', 'pad_blank', 'pad_recent']),
    'order': ('mixer', 'order', [1, 2, 3]),
    'head_mode': ('mixer', 'head_mode', ['direct', 'softmax', 'mlp']),
}

def _timestamp():
    return(datetime.datetime.now().isoformat(timespec='seconds'))

########
# Experiment
########
class Experiment(object):
    '''One training run: config -> run directory with manifest.json, metrics.csv, checkpoints/, traces/
    '''
    def __init__(self, config, name='asynccredit'):
        self.config = validate_config(config)
        self.name = name
        self.logger = RunLogger(name=self.name, config=config)
        self.verbose = config.output['verbose']
        self.no_progress = config.output['no_progress']
        self.layout = None
        self.learner = None

    def _write_manifest(self, **extra):
        manifest = {'config': self.config.as_dict(), 'seed': self.config.train['seed'],
                    'version': get_version(), 'output_dir': self.layout['run_dir'],
                    'started': self.started, 'finished': None}
        manifest.update(extra)
        write_json(self.layout['manifest'], manifest)

    def _test(self, metrics, loss):
        learner = self.learner
        result = learner.evaluate()
        row = {'step': learner.t_env, 'episodes': learner.episodes, 'loss': loss,
               'epsilon': epsilon_at(learner.t_env, self.config.train),
               'test_mean_return': result['mean'], 'test_return_std': result['std'],
               'q_min_offset': learner.tracker.offset, 'test_success_rate': result['success_rate']}
        metrics.append(row)
        self.logger.log_test_point(row)
        return(result)

    def _save(self, tag):
        path = join(self.layout['checkpoints'], '%s.ckpt' % tag)
        self.learner.save(path)
        return(path)

    def _train(self):
        self.logger.log_step_start('Training for %d environment steps' % self.config.train['total_timesteps'])
        start_time = time.time()
        train = self.config.train
        learner = self.learner
        metrics = MetricsWriter(self.layout['metrics'])
        last_test, last_save, loss = -train['test_interval'], 0, None
        progress = tqdm(total=train['total_timesteps'], disable=self.no_progress)
        while learner.t_env < train['total_timesteps']:
            # a round of num_workers episodes shares the parameters it was collected with
            for episode in learner.collect(train['num_workers'], epsilon_at(learner.t_env, train)):
                before = learner.t_env
                learner.record_episode(episode)
                progress.update(min(learner.t_env, train['total_timesteps']) - before)
                if learner.buffer.can_sample(train['batch_size']):
                    loss = learner.train_step(learner.buffer.sample(train['batch_size'], learner.sample_rng))
                if learner.t_env - last_test >= train['test_interval']:
                    self._test(metrics, loss)
                    last_test = learner.t_env
                if train['save_interval'] and learner.t_env - last_save >= train['save_interval']:
                    self._save('step_%d' % learner.t_env)
                    last_save = learner.t_env
                if learner.t_env >= train['total_timesteps']:
                    break
        progress.close()
        final = self._test(metrics, loss)
        final_path = self._save('final')
        self.logger.log_result('Episodes', learner.episodes)
        self.logger.log_result('Target syncs', learner.sync_count)
        self.logger.log_result('Final mean test return', final['mean'])
        self.logger.log_result('Final test success rate', final['success_rate'])
        self.logger.log_result('Q min offset', learner.tracker.offset)
        self.logger.log_step_end('Training', time.time() - start_time)
        return(final, final_path)

    def run(self):
        '''Train and evaluate; return the final evaluation'''
        self.logger.log_step_start('Running %s' % self.name)
        self.layout = prepare_run_dir(self.config, self.verbose)
        self.started = _timestamp()
        self._write_manifest()
        self.learner = Learner(self.config)
        self.learner.dump_dir = self.layout['run_dir']
        final, final_path = self._train()
        self._write_manifest(finished=_timestamp(), final_evaluation=final, final_checkpoint=final_path)
        self.logger.write_performance_log(self.layout['run_dir'], self.config)
        return(final)

def evaluate_checkpoint(checkpoint, episodes=None):
    learner = Learner.from_checkpoint(checkpoint)
    return(learner.evaluate(episodes))

def trace_checkpoint(checkpoint, out_path, episodes=1, env_conf=None):
    '''Greedy credit traces of a checkpoint written as CSV; return the frame'''
    learner = Learner.from_checkpoint(checkpoint)
    if env_conf:
        cfg = copy.deepcopy(learner.config)
        cfg.env.update(env_conf)
        trained = learner
        learner = Learner(cfg)
        learner.load_arrays(trained.state_arrays())
    return(write_trace(out_path, learner.credit_trace(episodes), learner.n_agents))

def run_ablation(axis, config, seeds=None):
    '''Train every value of [axis] for every seed under <out>/ablate-<axis>/ and summarize final returns
    '''
    if axis not in ABLATION_AXES:
        raise ValueError('unknown ablation axis %s' % axis)
    section, key, values = ABLATION_AXES[axis]
    seeds = seeds if seeds is not None else config.ablate['seeds']
    logger = RunLogger(name='ablate', config=config, log_config=False)
    root = join(output_root(config), 'ablate-%s' % axis)
    create_dir(root, config.output['verbose'])
    rows = []
    n_agents = make_env(config.env).spec.n_agents
    for value in values:
        if axis == 'order' and value > n_agents:
            logger.log_message('Skipping order %d: the env has %d agents' % (value, n_agents))
            continue
        for seed in seeds:
            cfg = config_from_dict(config.as_dict())
            getattr(cfg, section)[key] = value
            if axis == 'order':
                cfg.mixer['family'] = 'mvd'
            cfg.train['seed'] = seed
            cfg.output['run_id'] = join('ablate-%s' % axis, '%s-%s-s%d' % (axis, value, seed))
            logger.log_step_start('%s=%s seed=%d' % (axis, value, seed), sub=True)
            final = Experiment(cfg, name='ablate %s=%s' % (axis, value)).run()
            rows.append({'axis': axis, 'value': str(value), 'seed': seed,
                         'final_mean_return': final['mean'], 'final_success_rate': final['success_rate']})
    frame, summary = ablation_summary(rows)
    frame.to_csv(join(root, 'runs.csv'), index=False)
    summary.to_csv(join(root, 'summary.csv'), index=False)
    logger.log_result('Ablation summary', '\n' + summary.to_string(index=False))
    return(summary)
