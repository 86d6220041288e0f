'''Centralized training of decentralized recurrent agents over the 2n-slot wrappers.

One GruAgentNet is shared by every real slot and every proxy (the agent id one-hot tells agents
apart; a proxy carries its real agent's id), a mixer combines chosen-action utilities, and
target copies of both provide bootstrapped targets.
'''

import os
from collections import OrderedDict
from multiprocessing.pool import ThreadPool

import numpy as np

from .config_loader import config_from_dict, validate_config
from .exceptions import NonFiniteError
from .utils.tensor import Tensor, backward, gather, stack, no_grad
from .utils.nets import GruAgentNet, ParameterSet, Adam, gru_step, clip_grad_norm
from .utils.envs import make_env
from .utils.vsp import wrap_env, DECIDING, MASKED
from .utils.mixers import MixerInput, QminTracker, make_mixer, dump_credit_trace
from .utils.replay import Episode, ReplayBuffer, STEP_FIELDS
from .utils.checkpoint import save_checkpoint, load_checkpoint

def episode_rng(seed, index, stream=0):
    '''Independent random stream per (seed, stream, episode index); stream 0 trains, 1 samples, 2 tests'''
    return(np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(index)])))

def epsilon_at(step, train_conf):
    start, finish, anneal = train_conf['eps_start'], train_conf['eps_finish'], train_conf['eps_anneal_steps']
    if anneal <= 0:
        return(float(finish))
    fraction = min(float(step) / anneal, 1.0)
    return(float(start + fraction * (finish - start)))

def agent_inputs(obs, n_agents):
    '''Append the agent id one-hot to slot observations (..., 2n, obs_dim); proxy n+i carries id i'''
    ids = np.tile(np.eye(n_agents), (2, 1))
    return(np.concatenate([obs, np.broadcast_to(ids, obs.shape[:-1] + (n_agents,))], axis=-1))

def action_onehot(actions, phases, n_actions):
    '''One-hot of the actions; rows of masked slots are zero'''
    onehot = np.eye(n_actions)[np.asarray(actions, dtype=int)]
    return(onehot * (np.asarray(phases) != MASKED)[..., None])

def previous_action_onehots(actions, phases, n_actions):
    '''(B, T+1, 2n, A+1) previous-step action one-hots, zero at t=0'''
    current = action_onehot(actions, phases, n_actions)
    previous = np.zeros_like(current)
    previous[:, 1:] = current[:, :-1]
    return(previous)

def select_actions(q_values, avail, phases, epsilon, rng, blank):
    '''Epsilon-greedy under the action mask for deciding slots; forced or blank for the others
    '''
    actions = np.full(len(phases), blank, dtype=int)
    for j, phase in enumerate(phases):
        allowed = np.flatnonzero(avail[j])
        if allowed.size == 0:
            continue
        if phase != DECIDING:
            actions[j] = allowed[0]
        elif rng.random() < epsilon:
            actions[j] = allowed[rng.integers(allowed.size)]
        else:
            actions[j] = allowed[int(np.argmax(q_values[j, allowed]))]
    return(actions)

def greedy_actions(q_values, avail, blank):
    '''Per-slot argmax over allowed actions (lowest id on ties); blank where nothing is allowed'''
    scores = np.where(avail, q_values, -np.inf)
    greedy = np.argmax(scores, axis=-1)
    return(np.where(avail.any(axis=-1), greedy, blank))

def collect_episode(wrapper, agent, epsilon, rng, env_seed=0):
    '''Roll out one episode with hidden states threaded per slot
    '''
    n_agents, n_slots, blank = wrapper.n_agents, wrapper.n_slots, wrapper.blank
    n_actions = blank + 1
    ext, _ = wrapper.reset(env_seed)
    h = agent.init_hidden(n_slots)
    prev = np.zeros((n_slots, n_actions))
    rows = {name: [] for name in STEP_FIELDS}
    rewards, terminated, q_chosen = [], [], []

    def record(actions, phases, avail):
        rows['obs'].append(wrapper.slot_observations())
        rows['avail'].append(avail)
        rows['actions'].append(actions)
        rows['phases'].append(phases)
        rows['state'].append(ext.base_state)
        rows['ext_state'].append(ext.vector())

    with no_grad():
        while True:
            avail = wrapper.avail_matrix()
            phases = np.array(wrapper.phases())
            q, h = gru_step(agent, agent_inputs(wrapper.slot_observations(), n_agents), h, prev)
            actions = select_actions(q.data, avail, phases, epsilon, rng, blank)
            record(actions, phases, avail)
            q_chosen.append(q.data[np.arange(n_slots), actions])
            ext, reward, done = wrapper.step({j: int(actions[j]) for j in range(n_slots) if phases[j] == DECIDING})
            rewards.append(reward)
            terminated.append(done)
            prev = action_onehot(actions, phases, n_actions)
            if done:
                break
        record(np.full(n_slots, blank, dtype=int), np.array(wrapper.phases()), wrapper.avail_matrix())
    fields = {name: np.array(values) for name, values in rows.items()}
    return(Episode(reward=np.array(rewards, dtype=float), terminated=np.array(terminated, dtype=float),
                   q_chosen=np.array(q_chosen), success=float(wrapper.env.is_success()), **fields))

def bootstrap_target(reward, terminated, q_next, gamma):
    return(reward + gamma * (1.0 - terminated) * q_next)

def sync_targets(online, target, interval, episode):
    '''Hard copy online -> target when episode is a positive multiple of interval; True if copied'''
    if interval > 0 and episode > 0 and episode % interval == 0:
        target.copy_from(online)
        return(True)
    return(False)

class Learner(object):
    def __init__(self, config, env=None):
        validate_config(config)
        self.config = config
        train = config.train
        self.train_conf = train
        self.env = env if env is not None else make_env(config.env)
        self.wrapper = wrap_env(self.env, config.wrapper['mode'])
        spec = self.env.spec
        self.n_agents, self.n_slots = spec.n_agents, 2 * spec.n_agents
        self.blank = spec.action_count
        self.n_actions = spec.action_count + 1
        self.env_seed = config.env['seed'] or 0
        self.seed = int(train['seed'])
        self.gamma = float(train['gamma'])
        self.use_extended_state = bool(config.wrapper['use_extended_state'])
        mixer_state_dim = self.wrapper.extended_state_dim if self.use_extended_state else spec.state_dim

        rng = np.random.default_rng(self.seed)
        self.agent = GruAgentNet(spec.obs_dim + self.n_agents, config.agent['hidden_dim'], self.n_actions, rng)
        self.mixer = make_mixer(config.mixer, self.n_agents, mixer_state_dim, rng)
        self.tracker = QminTracker()
        self.target_agent = self.agent.clone()
        self.target_mixer = self.mixer.clone()
        self.params = ParameterSet.union(OrderedDict([('agent', self.agent.params), ('mixer', self.mixer.params)]))
        self.target_params = ParameterSet.union(OrderedDict([('agent', self.target_agent.params),
                                                             ('mixer', self.target_mixer.params)]))
        self.optimizer = Adam(self.params, train['learning_rate'], train['adam_betas'], train['adam_eps'])
        self.buffer = ReplayBuffer(train['buffer_size'])
        self.sample_rng = episode_rng(self.seed, 0, stream=1)
        self.episodes, self.t_env, self.sync_count, self.train_steps = 0, 0, 0, 0
        self.dump_dir = os.getcwd()

    '''Collection
    '''
    def _collect_one(self, index, epsilon, wrapper=None):
        wrapper = wrapper if wrapper is not None else self.wrapper.clone()
        return(collect_episode(wrapper, self.agent, epsilon, episode_rng(self.seed, index), self.env_seed))

    def collect(self, count, epsilon):
        '''Collect [count] episodes numbered from the current episode counter'''
        indices = [self.episodes + k for k in range(count)]
        workers = int(self.train_conf['num_workers'])
        if workers <= 1:
            return([self._collect_one(index, epsilon, self.wrapper) for index in indices])
        with ThreadPool(workers) as pool:
            return(pool.starmap(self._collect_one, [(index, epsilon) for index in indices]))

    def record_episode(self, episode):
        '''Store an episode, advance the counters and sync the targets on schedule'''
        self.buffer.insert(episode)
        self.episodes += 1
        self.t_env += episode.length
        if sync_targets(self.params, self.target_params, self.train_conf['target_update_interval'], self.episodes):
            self.sync_count += 1

    '''Training
    '''
    def unroll(self, agent, batch, steps):
        '''Per-step utilities (B, 2n, A+1) for t < steps'''
        B = batch.batch_size
        obs = agent_inputs(batch['obs'], self.n_agents)
        prev = previous_action_onehots(batch['actions'], batch['phases'], self.n_actions)
        h = agent.init_hidden(B * self.n_slots)
        outs = []
        for t in range(steps):
            q, h = gru_step(agent, obs[:, t].reshape(B * self.n_slots, -1), h,
                            prev[:, t].reshape(B * self.n_slots, -1))
            outs.append(q.reshape(B, self.n_slots, self.n_actions))
        return(outs)

    def mixer_states(self, batch):
        return(batch['ext_state'] if self.use_extended_state else batch['state'])

    def _observe_proxies(self, utilities, phases, filled):
        n = self.n_agents
        live = (phases[..., n:] != MASKED) & (filled[..., None] > 0)
        self.tracker.update(utilities[..., n:][live])

    def td_targets(self, batch):
        '''y_t = r_t + gamma * (1 - terminated_t) * Q'_tot(t+1) with greedy-under-mask target actions'''
        B, T = batch.batch_size, batch.max_len
        with no_grad():
            q_all = np.stack([q.data for q in self.unroll(self.target_agent, batch, T + 1)], axis=1)
            greedy = greedy_actions(q_all, batch['avail'], self.blank)
            chosen = np.take_along_axis(q_all, greedy[..., None], axis=-1)[..., 0]
            phases_next = batch['phases'][:, 1:]
            self._observe_proxies(chosen[:, 1:], phases_next, batch['filled'])
            mixer_input = MixerInput(Tensor(chosen[:, 1:].reshape(B * T, self.n_slots)),
                                     phases_next.reshape(B * T, self.n_slots),
                                     self.mixer_states(batch)[:, 1:].reshape(B * T, -1))
            q_next = self.target_mixer.forward(mixer_input, self.tracker).data.reshape(B, T)
        return(bootstrap_target(batch['reward'], batch['terminated'], q_next, self.gamma))

    def loss(self, batch):
        '''Masked mean squared TD error as a Tensor, with the targets it was computed against'''
        B, T = batch.batch_size, batch.max_len
        q_all = stack(self.unroll(self.agent, batch, T), axis=1)
        chosen = gather(q_all, batch['actions'][:, :T], axis=-1)
        phases = batch['phases'][:, :T]
        self._observe_proxies(chosen.data, phases, batch['filled'])
        targets = self.td_targets(batch)
        mixer_input = MixerInput(chosen.reshape(B * T, self.n_slots), phases.reshape(B * T, self.n_slots),
                                 self.mixer_states(batch)[:, :T].reshape(B * T, -1))
        q_tot = self.mixer.forward(mixer_input, self.tracker).reshape(B, T)
        filled = batch['filled']
        diff = q_tot - targets
        return((diff * diff * filled).sum() / max(float(filled.sum()), 1.0), targets)

    def _dump_batch(self, batch, reason):
        path = os.path.join(self.dump_dir, 'nan_batch.npz')
        np.savez(path, reason=np.array(reason), **batch.data)
        return(path)

    def train_step(self, batch):
        self.params.zero_grad()
        loss, _ = self.loss(batch)
        if not np.isfinite(loss.data).all():
            path = self._dump_batch(batch, 'non-finite loss')
            raise NonFiniteError('non-finite loss at train step %d (batch dumped to %s)' % (self.train_steps, path), path)
        backward(loss)
        clip_grad_norm(self.params, self.train_conf['grad_norm_clip'])
        try:
            self.optimizer.step()
        except NonFiniteError as err:
            path = self._dump_batch(batch, str(err))
            raise NonFiniteError('%s (batch dumped to %s)' % (err, path), path)
        self.train_steps += 1
        return(float(loss.data))

    '''Evaluation and inspection
    '''
    def evaluate(self, episodes=None):
        '''Greedy rollouts: mean and standard deviation of returns, success rate'''
        episodes = episodes or self.train_conf['test_episodes']
        wrapper = self.wrapper.clone()
        rollouts = [collect_episode(wrapper, self.agent, 0.0, episode_rng(self.seed, k, stream=2), self.env_seed)
                    for k in range(episodes)]
        returns = np.array([e.episode_return for e in rollouts])
        return({'mean': float(returns.mean()), 'std': float(returns.std()),
                'success_rate': float(np.mean([e['success'] for e in rollouts])),
                'returns': returns.tolist()})

    def credit_trace(self, episodes=1):
        '''dump_credit_trace records of greedy episodes: list of (episode index, records)'''
        wrapper = self.wrapper.clone()
        traces = []
        for k in range(episodes):
            episode = collect_episode(wrapper, self.agent, 0.0, episode_rng(self.seed, k, stream=2), self.env_seed)
            states = episode['ext_state'] if self.use_extended_state else episode['state']
            T = episode.length
            traces.append((k, dump_credit_trace(self.mixer, episode['q_chosen'], episode['phases'][:T],
                                                states[:T], self.tracker)))
        return(traces)

    '''Checkpoints
    '''
    def state_arrays(self):
        arrays = OrderedDict()
        for prefix, params in [('online', self.params), ('target', self.target_params)]:
            for name, value in params.state_dict().items():
                arrays['%s.%s' % (prefix, name)] = value
        arrays['tracker.q_min'] = np.array([self.tracker.q_min])
        return(arrays)

    def save(self, path, meta=None):
        arrays = self.state_arrays()
        content = {'config': self.config.as_dict(), 't_env': self.t_env, 'episodes': self.episodes,
                   'sync_count': self.sync_count, 'train_steps': self.train_steps}
        content.update(meta or {})
        save_checkpoint(path, arrays, content)

    def load_arrays(self, arrays):
        for prefix, params in [('online', self.params), ('target', self.target_params)]:
            params.load_state_dict({name[len(prefix) + 1:]: value for name, value in arrays.items()
                                    if name.startswith(prefix + '.')})
        self.tracker.q_min = float(arrays['tracker.q_min'][0])

    @classmethod
    def from_checkpoint(cls, path, config=None):
        arrays, meta = load_checkpoint(path)
        learner = cls(config if config is not None else config_from_dict(meta['config']))
        learner.load_arrays(arrays)
        learner.t_env, learner.episodes = meta.get('t_env', 0), meta.get('episodes', 0)
        learner.sync_count, learner.train_steps = meta.get('sync_count', 0), meta.get('train_steps', 0)
        return(learner)
