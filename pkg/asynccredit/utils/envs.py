'''Asynchronous cooperative environments.

Agents commit to actions that run for duration(agent, action) steps. An agent is asked for a new
action at t=0 and on the step right after its running action completes (decision_mask true);
while busy, whatever it is given is ignored. The blank action id equals action_count.
'''

import copy
import itertools
from collections import namedtuple

import numpy as np

from ..exceptions import ContractError, ConfigError

class EnvSpec(namedtuple('EnvSpec', ['n_agents', 'action_count', 'obs_dim', 'state_dim',
                                     'durations', 'episode_limit'])):
    __slots__ = ()

    def duration(self, agent, action):
        return(int(self.durations[agent][action]))

    @property
    def blank(self):
        return(self.action_count)

StepResult = namedtuple('StepResult', ['next_state', 'observations', 'reward', 'terminated', 'decision_mask'])

class AsyncEnv(object):
    '''Phase bookkeeping shared by the bundled environments; subclasses describe the world.
    '''
    name = 'async'
    n_agents = 0
    action_count = 0

    def __init__(self, episode_limit):
        if episode_limit < 1:
            raise ConfigError('episode_limit should be >= 1, got %s' % episode_limit)
        self.episode_limit = int(episode_limit)

    @property
    def spec(self):
        return(EnvSpec(self.n_agents, self.action_count, self.obs_dim, self.state_dim,
                       tuple(tuple(int(d) for d in row) for row in self.duration_table()), self.episode_limit))

    @property
    def blank(self):
        return(self.action_count)

    def reset(self, seed=0):
        self._reset_world(seed)
        self.t = 0
        self.remaining = [0] * self.n_agents
        self.running = [self.blank] * self.n_agents
        self.terminated = False
        return(self._result(0.0))

    def step(self, joint_action):
        if self.terminated:
            raise ContractError('step called on a terminated episode')
        if len(joint_action) != self.n_agents:
            raise ContractError('expected %d actions, got %d' % (self.n_agents, len(joint_action)))
        mask = self.decision_mask
        started = []
        for agent, action in enumerate(joint_action):
            action = int(action)
            if not 0 <= action <= self.blank:
                raise ContractError('action id %d of agent %d out of range [0, %d]' % (action, agent, self.blank))
            if not mask[agent]:
                continue
            if action == self.blank:
                raise ContractError('agent %d must choose an action, got blank' % agent)
            self.running[agent] = action
            self.remaining[agent] = self.duration(agent, action)
            started.append(agent)
        self._on_decisions(started)
        completed = []
        for agent in range(self.n_agents):
            self.remaining[agent] -= 1
            if self.remaining[agent] == 0:
                completed.append((agent, self.running[agent]))
        reward, done = self._advance(completed)
        for agent, _ in completed:
            self.running[agent] = self.blank
        self.t += 1
        self.terminated = bool(done or self.t >= self.episode_limit)
        return(self._result(reward))

    @property
    def decision_mask(self):
        return([r == 0 for r in self.remaining])

    def duration(self, agent, action):
        return(int(self.duration_table()[agent][action]))

    def observations(self):
        return(np.stack([self._observe(agent) for agent in range(self.n_agents)]))

    def _result(self, reward):
        return(StepResult(self.state_vector(), self.observations(), float(reward), self.terminated, self.decision_mask))

    '''Tabular interface used by the oracles
    '''
    def get_state(self):
        return((self.t, tuple(self.remaining), tuple(self.running), self.terminated, self._world_key()))

    def set_state(self, key):
        t, remaining, running, terminated, world = key
        self.t, self.remaining, self.running, self.terminated = t, list(remaining), list(running), terminated
        self._set_world(world)

    def is_terminal(self):
        return(self.terminated)

    def legal_joint_actions(self):
        if self.terminated:
            return([])
        choices = [range(self.action_count) if deciding else (self.blank,) for deciding in self.decision_mask]
        return(list(itertools.product(*choices)))

    def transition(self, joint_action):
        result = self.step(joint_action)
        return(result.reward, result.terminated)

    def clone(self):
        return(copy.deepcopy(self))

    def _on_decisions(self, started):
        pass

class AsyncMatrixGame(AsyncEnv):
    '''Two-player asynchronous matrix game.
    The row agent commits at t=0 to an action lasting row_duration steps; the column agent's t=0 choice
    is a placeholder, and at t=1 it picks its real action while seeing the row action in progress.
    The only reward is the product of the two chosen action values, paid when both have completed.
    '''
    name = 'matrix'
    n_agents = 2
    action_count = 2

    def __init__(self, row_action_values=(1.0, 2.0), column_action_values=(1.0, 2.0), row_duration=2,
                 episode_limit=3, seed=0):
        super().__init__(episode_limit)
        if row_duration < 2:
            raise ConfigError('row_duration should be >= 2 so the column agent decides mid-execution')
        self.row_action_values = np.array(row_action_values, dtype=float)
        self.column_action_values = np.array(column_action_values, dtype=float)
        self.row_duration = int(row_duration)
        self.obs_dim = 4
        self.state_dim = 6
        self.reset(seed)

    def duration_table(self):
        return([[self.row_duration] * 2, [1, 1]])

    def payoff_table(self):
        return(np.outer(self.row_action_values, self.column_action_values))

    def _reset_world(self, seed):
        self.row_choice, self.column_choice = -1, -1

    def _world_key(self):
        return((self.row_choice, self.column_choice))

    def _set_world(self, world):
        self.row_choice, self.column_choice = world

    def _on_decisions(self, started):
        if self.t == 0 and 0 in started:
            self.row_choice = self.running[0]
        if self.t >= 1 and 1 in started and self.column_choice < 0:
            self.column_choice = self.running[1]

    def _advance(self, completed):
        if self.column_choice >= 0 and self.row_choice >= 0 and self.remaining[0] <= 0:
            reward = self.row_action_values[self.row_choice] * self.column_action_values[self.column_choice]
            return(reward, True)
        return(0.0, False)

    def _observe(self, agent):
        obs = np.zeros(self.obs_dim)
        obs[0] = 1.0 if self.t == 0 else 0.0
        if self.remaining[0] > 0 and self.running[0] != self.blank:
            obs[1 + self.running[0]] = 1.0
        obs[3] = self.remaining[agent] / float(self.row_duration)
        return(obs)

    def state_vector(self):
        state = np.zeros(self.state_dim)
        state[0] = self.t / float(self.episode_limit)
        if self.row_choice >= 0: state[1 + self.row_choice] = 1.0
        if self.column_choice >= 0: state[3 + self.column_choice] = 1.0
        state[5] = self.remaining[0] / float(self.row_duration)
        return(state)

    def is_success(self):
        return(self.terminated and self.column_choice >= 0 and
               self.row_action_values[self.row_choice] * self.column_action_values[self.column_choice]
               == self.payoff_table().max())

# gridworld actions
STAY, UP, DOWN, LEFT, RIGHT = range(5)
MOVES = {STAY: (0, 0), UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
# item status
ON_FLOOR, CARRIED, DELIVERED = range(3)

class AsyncGridworld(AsyncEnv):
    '''Item-delivery gridworld with per-agent movement durations.
    A move takes effect when it completes; staying takes one step. An agent picks up a floor item it
    stands on (one item at a time) and a carried item is delivered when the carrier and at least one
    other agent stand on the goal cell together: +10 per delivered item, -0.1 every step.
    The layout (goal, items, starts) and any undrawn durations come from the reset seed.
    '''
    name = 'gridworld'
    n_agents = 3
    action_count = 5
    delivery_reward = 10.0
    step_penalty = -0.1

    def __init__(self, grid_size=3, durations=None, episode_limit=50, n_items=2, seed=0):
        super().__init__(episode_limit)
        self.grid_size = int(grid_size)
        self.n_items = int(n_items)
        if 1 + self.n_items + self.n_agents > self.grid_size ** 2:
            raise ConfigError('a %dx%d grid cannot hold the goal, %d items and %d agents' % (
                self.grid_size, self.grid_size, self.n_items, self.n_agents))
        if durations is not None:
            if len(durations) != self.n_agents or any(int(d) < 1 for d in durations):
                raise ConfigError('env.durations should hold %d positive integers, got %s' % (self.n_agents, durations))
        self.configured_durations = None if durations is None else [int(d) for d in durations]
        cells = self.grid_size ** 2
        self.obs_dim = 4 * 9 + 4
        self.state_dim = self.n_agents * cells + self.n_agents + 3 * self.n_items + self.n_agents + 1
        self.reset(seed)

    def duration_table(self):
        return([[1] + [d] * 4 for d in self.move_durations])

    def _reset_world(self, seed):
        rng = np.random.default_rng(seed)
        cells = rng.permutation(self.grid_size ** 2)
        self.goal = self._cell(cells[0])
        self.item_cells = tuple(self._cell(c) for c in cells[1:1 + self.n_items])
        starts = cells[1 + self.n_items:1 + self.n_items + self.n_agents]
        if self.configured_durations is None:
            self.move_durations = [int(d) for d in rng.integers(1, 4, size=self.n_agents)]
        else:
            self.move_durations = list(self.configured_durations)
        self.positions = tuple(self._cell(c) for c in starts)
        self.carrying = tuple([-1] * self.n_agents)
        self.item_status = tuple([ON_FLOOR] * self.n_items)

    def _cell(self, index):
        return((int(index) // self.grid_size, int(index) % self.grid_size))

    def layout(self):
        return({'goal': self.goal, 'items': self.item_cells, 'starts': self.positions,
                'durations': list(self.move_durations)})

    def _world_key(self):
        return((self.positions, self.carrying, self.item_status))

    def _set_world(self, world):
        self.positions, self.carrying, self.item_status = world

    def _advance(self, completed):
        positions, carrying, status = list(self.positions), list(self.carrying), list(self.item_status)
        for agent, action in completed:
            dr, dc = MOVES[action]
            r, c = positions[agent]
            positions[agent] = (min(max(r + dr, 0), self.grid_size - 1), min(max(c + dc, 0), self.grid_size - 1))
        for agent in range(self.n_agents):
            if carrying[agent] >= 0:
                continue
            for item, cell in enumerate(self.item_cells):
                if status[item] == ON_FLOOR and cell == positions[agent]:
                    status[item], carrying[agent] = CARRIED, item
                    break
        reward = self.step_penalty
        at_goal = [agent for agent in range(self.n_agents) if positions[agent] == self.goal]
        if len(at_goal) >= 2:
            for agent in at_goal:
                if carrying[agent] >= 0:
                    status[carrying[agent]], carrying[agent] = DELIVERED, -1
                    reward += self.delivery_reward
        self.positions, self.carrying, self.item_status = tuple(positions), tuple(carrying), tuple(status)
        return(reward, all(s == DELIVERED for s in status))

    def _observe(self, agent):
        channels = np.zeros((4, 3, 3))
        r0, c0 = self.positions[agent]
        floor_items = [cell for cell, s in zip(self.item_cells, self.item_status) if s == ON_FLOOR]
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                r, c = r0 + dr, c0 + dc
                if not (0 <= r < self.grid_size and 0 <= c < self.grid_size):
                    channels[3, dr + 1, dc + 1] = 1.0
                    continue
                others = [a for a in range(self.n_agents) if a != agent and self.positions[a] == (r, c)]
                channels[0, dr + 1, dc + 1] = float(len(others))
                channels[1, dr + 1, dc + 1] = float((r, c) in floor_items)
                channels[2, dr + 1, dc + 1] = float((r, c) == self.goal)
        scale = float(max(self.grid_size - 1, 1))
        own = [float(self.carrying[agent] >= 0), self.remaining[agent] / 3.0, r0 / scale, c0 / scale]
        return(np.concatenate([channels.ravel(), own]))

    def state_vector(self):
        cells = self.grid_size ** 2
        position = np.zeros((self.n_agents, cells))
        for agent, (r, c) in enumerate(self.positions):
            position[agent, r * self.grid_size + c] = 1.0
        status = np.zeros((self.n_items, 3))
        status[np.arange(self.n_items), list(self.item_status)] = 1.0
        return(np.concatenate([position.ravel(), [float(c >= 0) for c in self.carrying], status.ravel(),
                               np.array(self.remaining) / 3.0, [self.t / float(self.episode_limit)]]))

    def is_success(self):
        return(all(s == DELIVERED for s in self.item_status))

def make_env(env_conf):
    '''Build the environment named by config section env'''
    name = env_conf['name']
    seed = env_conf.get('seed', 0) or 0
    if name == 'matrix':
        return(AsyncMatrixGame(episode_limit=env_conf.get('episode_limit') or 3, seed=seed))
    if name in ('gridworld', 'gridworld_large'):
        default_size = 3 if name == 'gridworld' else 5
        return(AsyncGridworld(grid_size=env_conf.get('grid_size') or default_size,
                              durations=env_conf.get('durations'),
                              episode_limit=env_conf.get('episode_limit') or 50,
                              n_items=env_conf.get('n_items', 2), seed=seed))
    raise ConfigError('unknown env.name %s' % name)
