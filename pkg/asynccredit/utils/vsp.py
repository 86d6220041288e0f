'''Slot wrappers turning an asynchronous env into a fixed 2n-slot decision problem.

Slots 0..n-1 are the real agents, slots n..2n-1 their proxies. VspEnv unmasks proxy n+i while agent
i executes: the proxy replays i's running action with the observation i held when it committed.
The padding, discard and passthrough wrappers keep the proxies masked and differ only in how they
present executing real agents.
'''

import copy
import itertools
from collections import namedtuple

import numpy as np

from ..exceptions import ContractError, ConfigError

DECIDING, EXECUTING, MASKED = 0, 1, 2
PHASE_NAMES = {DECIDING: 'deciding', EXECUTING: 'executing', MASKED: 'masked'}
REAL, PROXY = 'real', 'proxy'
# action entry of a masked slot in tabular joint actions
MASKED_ACTION = -1

AgentSlot = namedtuple('AgentSlot', ['slot_id', 'kind', 'phase', 'paired_real'])

class ExtendedState(object):
    '''s_hat = [s ; o_c] with proxy bookkeeping; o_c rows of non-executing agents are zero
    '''
    def __init__(self, base_state, observations, decision_obs, decision_actions, phases, t):
        self.base_state = np.asarray(base_state, dtype=float)
        self.observations = np.asarray(observations, dtype=float)
        self.decision_obs = np.asarray(decision_obs, dtype=float)
        self.decision_actions = tuple(decision_actions)
        self.phases = tuple(phases)
        self.t = t

    def vector(self):
        return(np.concatenate([self.base_state, self.decision_obs.ravel()]))

    def executing(self):
        n = len(self.decision_actions)
        return([i for i in range(n) if self.phases[n + i] == EXECUTING])

class SlotEnv(object):
    mode = None

    def __init__(self, env):
        self.env = env
        spec = env.spec
        self.n_agents = spec.n_agents
        self.action_count = spec.action_count
        self.obs_dim = spec.obs_dim
        self.blank = spec.action_count
        self.n_slots = 2 * self.n_agents

    @property
    def spec(self):
        return(self.env.spec)

    @property
    def extended_state_dim(self):
        return(self.env.spec.state_dim + self.n_agents * self.obs_dim)

    def reset(self, seed=0):
        result = self.env.reset(seed)
        self._obs = result.observations
        self._mask = list(result.decision_mask)
        self.decision_obs = np.zeros((self.n_agents, self.obs_dim))
        self.decision_actions = [self.blank] * self.n_agents
        return(self.extended_state(), self.slots())

    '''Phases and masks
    '''
    def _real_phase(self, agent):
        return(DECIDING if self._mask[agent] else EXECUTING)

    def _proxy_phase(self, agent):
        return(MASKED)

    def phases(self):
        n = self.n_agents
        return([self._real_phase(i) for i in range(n)] + [self._proxy_phase(i) for i in range(n)])

    def slots(self):
        n = self.n_agents
        return([AgentSlot(j, REAL if j < n else PROXY, phase, None if j < n else j - n)
                for j, phase in enumerate(self.phases())])

    def _executing_real_action(self, agent):
        return(self.blank)

    def _proxy_action(self, agent):
        return(self.decision_actions[agent])

    def _allowed(self, slot, phase):
        n = self.n_agents
        if phase == MASKED:
            return(set())
        if slot < n:
            return(set(range(self.action_count)) if phase == DECIDING else {self._executing_real_action(slot)})
        return({self._proxy_action(slot - n)})

    def action_mask(self):
        '''Per-slot allowed action ids (BLANK = action_count)'''
        return([self._allowed(j, phase) for j, phase in enumerate(self.phases())])

    def avail_matrix(self):
        avail = np.zeros((self.n_slots, self.action_count + 1), dtype=bool)
        for j, allowed in enumerate(self.action_mask()):
            avail[j, sorted(allowed)] = True
        return(avail)

    def slot_observations(self):
        '''(2n, obs_dim): real slots see their current observation, proxies the recorded decision one'''
        n = self.n_agents
        phases = self.phases()
        obs = np.zeros((self.n_slots, self.obs_dim))
        for i in range(n):
            if phases[i] != MASKED:
                obs[i] = self._obs[i]
            if phases[n + i] != MASKED:
                obs[n + i] = self.decision_obs[i]
        return(obs)

    def extended_state(self):
        executing = [not m for m in self._mask]
        decision_obs = np.where(np.array(executing)[:, None], self.decision_obs, 0.0)
        return(ExtendedState(self.env.state_vector(), self._obs, decision_obs, self.decision_actions,
                             self.phases(), self.env.t))

    '''Stepping
    '''
    def step(self, decisions):
        '''Advance the env once.
        - decisions: dict slot id -> action id, exactly for the slots in the deciding phase
        Return (ExtendedState, reward, terminated).
        '''
        phases = self.phases()
        deciding = [j for j, phase in enumerate(phases) if phase == DECIDING]
        for slot in decisions:
            if slot < 0 or slot >= self.n_slots or phases[slot] != DECIDING:
                raise ContractError('slot %s is not deciding (phase %s)' % (slot, PHASE_NAMES.get(phases[slot])
                                    if 0 <= slot < self.n_slots else 'none'))
        missing = [j for j in deciding if j not in decisions]
        if missing:
            raise ContractError('no decision for deciding slots %s' % missing)
        for slot in deciding:
            if int(decisions[slot]) not in self._allowed(slot, DECIDING):
                raise ContractError('action %s not allowed for slot %d' % (decisions[slot], slot))
        joint = [int(decisions[i]) if i in decisions else self.blank for i in range(self.n_agents)]
        for i in range(self.n_agents):
            if self._mask[i]:
                self.decision_obs[i] = self._obs[i]
                self.decision_actions[i] = joint[i]
        result = self.env.step(joint)
        self._obs = result.observations
        self._mask = list(result.decision_mask)
        for i in range(self.n_agents):
            if self._mask[i]:
                self.decision_obs[i] = 0.0
                self.decision_actions[i] = self.blank
        return(self.extended_state(), result.reward, result.terminated)

    '''Tabular interface used by the oracles
    '''
    def get_state(self):
        return((self.env.get_state(), tuple(self.decision_obs.ravel().tolist()), tuple(self.decision_actions)))

    @staticmethod
    def base_key(key):
        return(key[0])

    def set_state(self, key):
        env_key, decision_obs, decision_actions = key
        self.env.set_state(env_key)
        self.decision_obs = np.array(decision_obs, dtype=float).reshape(self.n_agents, self.obs_dim)
        self.decision_actions = list(decision_actions)
        self._obs = self.env.observations()
        self._mask = list(self.env.decision_mask)

    def is_terminal(self):
        return(self.env.is_terminal())

    def legal_joint_actions(self):
        if self.env.is_terminal():
            return([])
        choices = [sorted(allowed) if allowed else [MASKED_ACTION] for allowed in self.action_mask()]
        return(list(itertools.product(*choices)))

    def transition(self, joint_action):
        '''Step with a full 2n-slot joint action; forced entries must match the mask'''
        phases = self.phases()
        decisions = {}
        for j, (phase, action) in enumerate(zip(phases, joint_action)):
            if phase == DECIDING:
                decisions[j] = action
                continue
            allowed = self._allowed(j, phase)
            expected = MASKED_ACTION if not allowed else next(iter(allowed))
            if action != expected:
                raise ContractError('slot %d must carry action %s, got %s' % (j, expected, action))
        _, reward, terminated = self.step(decisions)
        return(reward, terminated)

    def clone(self):
        return(copy.deepcopy(self))

class VspEnv(SlotEnv):
    mode = 'vsp'

    def _proxy_phase(self, agent):
        return(MASKED if self._mask[agent] else EXECUTING)

class PaddedEnv(SlotEnv):
    '''Executing agents are padded with BLANK (pad_blank) or their running action (pad_recent)'''
    def __init__(self, env, padding='blank'):
        if padding not in ('blank', 'recent'):
            raise ConfigError('padding mode should be blank or recent, got %s' % padding)
        super().__init__(env)
        self.padding = padding
        self.mode = 'pad_' + padding

    def _executing_real_action(self, agent):
        return(self.decision_actions[agent] if self.padding == 'recent' else self.blank)

class DiscardEnv(SlotEnv):
    '''Executing agents drop out of the step entirely'''
    mode = 'discard'

    def _real_phase(self, agent):
        return(DECIDING if self._mask[agent] else MASKED)

class PassthroughEnv(SlotEnv):
    '''Every real agent is asked every step; the env ignores busy agents' picks'''
    mode = 'none'

    def _real_phase(self, agent):
        return(DECIDING)

def wrap_padding(env, mode):
    return(PaddedEnv(env, mode))

def wrap_env(env, mode):
    if mode == 'vsp':
        return(VspEnv(env))
    if mode in ('pad_blank', 'pad_recent'):
        return(PaddedEnv(env, mode[4:]))
    if mode == 'discard':
        return(DiscardEnv(env))
    if mode == 'none':
        return(PassthroughEnv(env))
    raise ConfigError('unknown wrapper.mode %s' % mode)

def check_pair_coherence(wrapper):
    '''Compare the wrapper's proxy slots with the env's own execution state.
    Return a list of violation messages (empty when coherent).
    '''
    env, n = wrapper.env, wrapper.n_agents
    phases, mask = wrapper.phases(), wrapper.action_mask()
    obs = wrapper.slot_observations()
    violations = []
    for i in range(n):
        executing = not env.decision_mask[i]
        if (phases[n + i] != MASKED) != executing:
            violations.append('t=%d: proxy %d unmasked=%s but agent executing=%s' % (
                env.t, n + i, phases[n + i] != MASKED, executing))
            continue
        if executing and mask[n + i] != {env.running[i]}:
            violations.append('t=%d: proxy %d allowed %s, running action %d' % (
                env.t, n + i, sorted(mask[n + i]), env.running[i]))
        if executing and not np.array_equal(obs[n + i], wrapper.decision_obs[i]):
            violations.append('t=%d: proxy %d observation differs from the decision observation' % (env.t, n + i))
    return(violations)

MacroTransition = namedtuple('MacroTransition', ['obs', 'action', 'reward', 'next_obs', 'duration', 'terminated'])

def collect_discarding(env, policies, gamma, seed=0):
    '''Roll out one episode and return one macro-transition stream per agent.
    - policies: callable(agent, observation) -> action, or one callable per agent
    Each transition's reward is the discounted sum of the shared rewards over the action's duration.
    '''
    n = env.spec.n_agents
    choose = policies if callable(policies) else (lambda agent, obs: policies[agent](obs))
    result = env.reset(seed)
    streams = [[] for _ in range(n)]
    open_actions = [None] * n
    while True:
        joint = []
        for i in range(n):
            if result.decision_mask[i]:
                action = int(choose(i, result.observations[i]))
                open_actions[i] = {'obs': result.observations[i].copy(), 'action': action, 'reward': 0.0, 'k': 0}
                joint.append(action)
            else:
                joint.append(env.blank)
        result = env.step(joint)
        for i in range(n):
            pending = open_actions[i]
            pending['reward'] += gamma ** pending['k'] * result.reward
            pending['k'] += 1
            if result.decision_mask[i] or result.terminated:
                streams[i].append(MacroTransition(pending['obs'], pending['action'], pending['reward'],
                                                  result.observations[i].copy(), pending['k'], result.terminated))
                open_actions[i] = None
        if result.terminated:
            return(streams)
