'''Exact ground truth on small instances:
- tabular models built by exhaustive breadth-first enumeration of an env's reachable states
- policy evaluation and value iteration over (state, joint action) pairs with sparse transitions
- the raw vs. proxy-wrapped equivalence report
- least-squares additive and multiplicative fits of payoff tables
'''

import itertools
from collections import deque, namedtuple

import numpy as np
import scipy.sparse
import scipy.linalg

from .vsp import VspEnv
from ..exceptions import BudgetExceededError, ConvergenceError, ContractError

class TabularModel(object):
    '''Explicit finite model.
    - states     : list of hashable state keys; index 0 is the initial state
    - actions    : per state, the list of legal joint actions (empty for terminal states)
    - transitions: per state, per action, a list of (probability, next state index)
    - rewards    : per state, per action, the expected reward
    - terminal   : per state flag
    (state, action) pairs are numbered state by state; sa_offsets[s]:sa_offsets[s+1] belong to s.
    '''
    def __init__(self, states, actions, transitions, rewards, terminal):
        self.states = list(states)
        self.index = {key: i for i, key in enumerate(self.states)}
        self.terminal = np.asarray(terminal, dtype=bool)
        self.sa_offsets = np.zeros(len(self.states) + 1, dtype=np.int64)
        self.sa_offsets[1:] = np.cumsum([len(a) for a in actions])
        self.sa_state = np.repeat(np.arange(len(self.states)), [len(a) for a in actions])
        self.sa_action = [a for state_actions in actions for a in state_actions]
        self.rewards = np.array([r for state_rewards in rewards for r in state_rewards], dtype=float)
        rows, cols, probs = [], [], []
        self.sa_transitions = []
        for k, outcomes in enumerate(o for state_transitions in transitions for o in state_transitions):
            self.sa_transitions.append(list(outcomes))
            for p, nxt in outcomes:
                rows.append(k)
                cols.append(nxt)
                probs.append(p)
        self.P = scipy.sparse.csr_matrix((probs, (rows, cols)), shape=(self.n_sa, self.n_states))
        self.sa_lookup = {(int(s), a): k for k, (s, a) in enumerate(zip(self.sa_state, self.sa_action))}

    @property
    def n_states(self):
        return(len(self.states))

    @property
    def n_sa(self):
        return(len(self.sa_action))

    def row_sums(self):
        return(np.asarray(self.P.sum(axis=1)).ravel())

    def state_actions(self, state):
        return(range(self.sa_offsets[state], self.sa_offsets[state + 1]))

    def step(self, state, action, rng=None):
        '''(reward, next state index) of one transition; sampled when stochastic'''
        k = self.sa_lookup[(int(state), tuple(action))]
        outcomes = self.sa_transitions[k]
        if len(outcomes) == 1:
            return(self.rewards[k], outcomes[0][1])
        rng = rng if rng is not None else np.random.default_rng()
        probs = np.array([p for p, _ in outcomes])
        return(self.rewards[k], outcomes[rng.choice(len(outcomes), p=probs)][1])

def enumerate_tabular(env, seed=0, max_states=10000):
    '''Breadth-first enumeration of the states reachable from env.reset(seed)
    '''
    env.reset(seed)
    root = env.get_state()
    states, index = [root], {root: 0}
    actions, transitions, rewards, terminal = [], [], [], []
    queue = deque([0])
    while queue:
        s = queue.popleft()
        key = states[s]
        env.set_state(key)
        if env.is_terminal():
            actions.append([]); transitions.append([]); rewards.append([]); terminal.append(True)
            continue
        legal = env.legal_joint_actions()
        s_transitions, s_rewards = [], []
        for joint in legal:
            env.set_state(key)
            reward, _ = env.transition(joint)
            nxt = env.get_state()
            if nxt not in index:
                if len(states) >= max_states:
                    raise BudgetExceededError('more than %d reachable states (budget %d)' % (len(states), max_states),
                                              len(states) + 1)
                index[nxt] = len(states)
                states.append(nxt)
                queue.append(index[nxt])
            s_transitions.append([(1.0, index[nxt])])
            s_rewards.append(reward)
        actions.append([tuple(int(a) for a in joint) for joint in legal])
        transitions.append(s_transitions)
        rewards.append(s_rewards)
        terminal.append(False)
    return(TabularModel(states, actions, transitions, rewards, terminal))

'''Policies: arrays of probabilities aligned with the model's (state, action) pairs
'''
def uniform_policy(model):
    counts = np.diff(model.sa_offsets)
    return(1.0 / counts[model.sa_state])

def random_policy(model, rng):
    '''A uniformly random distribution over legal joint actions in every state'''
    policy = np.zeros(model.n_sa)
    for s in range(model.n_states):
        lo, hi = model.sa_offsets[s], model.sa_offsets[s + 1]
        if hi > lo:
            policy[lo:hi] = rng.dirichlet(np.ones(hi - lo))
    return(policy)

def _policy_matrix(model, policy):
    return(scipy.sparse.csr_matrix((policy, (model.sa_state, np.arange(model.n_sa))),
                                   shape=(model.n_states, model.n_sa)))

def _check_gamma(gamma):
    if not 0.0 <= gamma <= 1.0:
        raise ContractError('gamma should lie in [0, 1], got %s' % gamma)

def policy_eval(model, policy, gamma, tol=1e-12, iteration_cap=1000000):
    '''Q^pi over (state, action) pairs by iterating the Bellman expectation operator
    until the max-abs residual drops below tol'''
    _check_gamma(gamma)
    pi = _policy_matrix(model, np.asarray(policy, dtype=float))
    q = np.zeros(model.n_sa)
    for _ in range(int(iteration_cap)):
        q_next = model.rewards + gamma * (model.P @ (pi @ q))
        residual = np.max(np.abs(q_next - q)) if model.n_sa else 0.0
        q = q_next
        if residual < tol:
            return(q)
    raise ConvergenceError('policy evaluation did not converge within %d sweeps' % iteration_cap)

def state_values(model, q):
    '''max over legal actions per state (0 for terminal states)'''
    values = np.zeros(model.n_states)
    live = np.flatnonzero(~model.terminal)
    if live.size:
        values[live] = np.maximum.reduceat(q, model.sa_offsets[live])
    return(values)

def value_iteration(model, gamma, tol=1e-12, iteration_cap=1000000):
    '''Q* by iterating the Bellman optimality operator'''
    _check_gamma(gamma)
    q = np.zeros(model.n_sa)
    for _ in range(int(iteration_cap)):
        q_next = model.rewards + gamma * (model.P @ state_values(model, q))
        residual = np.max(np.abs(q_next - q)) if model.n_sa else 0.0
        q = q_next
        if residual < tol:
            return(q)
    raise ConvergenceError('value iteration did not converge within %d sweeps' % iteration_cap)

def policy_value(model, policy, q, state=0):
    lo, hi = model.sa_offsets[state], model.sa_offsets[state + 1]
    return(float(np.dot(policy[lo:hi], q[lo:hi])))

def _segment_sample(cumulative, offsets, states, u):
    '''For each rollout in state states[r], the index k in that state's segment with cumulative[k] >= u[r]'''
    picks = np.empty(len(states), dtype=np.int64)
    for s in np.unique(states):
        rows = np.flatnonzero(states == s)
        lo, hi = offsets[s], offsets[s + 1]
        local = np.searchsorted(cumulative[lo:hi], u[rows], side='left')
        picks[rows] = lo + np.minimum(local, hi - lo - 1)
    return(picks)

def monte_carlo_returns(model, policy, gamma, n_rollouts, rng, max_steps=100000):
    '''Discounted returns of n_rollouts episodes from the initial state, all simulated together'''
    policy = np.asarray(policy, dtype=float)
    cumulative = np.zeros_like(policy)
    for s in range(model.n_states):
        lo, hi = model.sa_offsets[s], model.sa_offsets[s + 1]
        cumulative[lo:hi] = np.cumsum(policy[lo:hi])
    # flatten stochastic outcomes the same way
    out_offsets = np.zeros(model.n_sa + 1, dtype=np.int64)
    out_offsets[1:] = np.cumsum([len(o) for o in model.sa_transitions])
    out_cumulative = np.concatenate([np.cumsum([p for p, _ in o]) for o in model.sa_transitions]) \
        if model.n_sa else np.zeros(0)
    out_next = np.array([nxt for o in model.sa_transitions for _, nxt in o], dtype=np.int64)

    current = np.zeros(n_rollouts, dtype=np.int64)
    returns = np.zeros(n_rollouts)
    discount = np.ones(n_rollouts)
    for _ in range(max_steps):
        active = np.flatnonzero(~model.terminal[current])
        if active.size == 0:
            return(returns)
        sa = _segment_sample(cumulative, model.sa_offsets, current[active], rng.random(active.size))
        returns[active] += discount[active] * model.rewards[sa]
        outcome = _segment_sample(out_cumulative, out_offsets, sa, rng.random(active.size))
        current[active] = out_next[outcome]
        discount[active] *= gamma
    return(returns)

'''Raw vs. proxy-wrapped equivalence
'''
def correspondence(raw_model, vsp_model, n_agents):
    '''For every (s_hat, a_hat) pair of the wrapped model, the index of the matching raw (s, a) pair;
    -1 where none exists'''
    mapping = np.full(vsp_model.n_sa, -1, dtype=np.int64)
    for k in range(vsp_model.n_sa):
        key = vsp_model.states[vsp_model.sa_state[k]]
        raw_state = raw_model.index.get(VspEnv.base_key(key))
        if raw_state is None:
            continue
        mapping[k] = raw_model.sa_lookup.get((raw_state, tuple(vsp_model.sa_action[k][:n_agents])), -1)
    return(mapping)

def vsp_equivalence_test(raw_env, gamma, n_policies=50, seed=0, env_seed=0, max_states=10000,
                         tol=1e-10, name='vsp_equivalence'):
    '''Check Q^pi and Q* of the raw env against its proxy-wrapped version on corresponding pairs.
    Return a JSON-friendly report.
    '''
    n = raw_env.spec.n_agents
    raw_model = enumerate_tabular(raw_env.clone(), env_seed, max_states)
    vsp_model = enumerate_tabular(VspEnv(raw_env.clone()), env_seed, max_states)
    mapping = correspondence(raw_model, vsp_model, n)
    report = {'test': name, 'raw_states': raw_model.n_states, 'vsp_states': vsp_model.n_states,
              'policies': n_policies, 'max_deviation': 0.0, 'offending': None, 'passed': True}
    if np.any(mapping < 0):
        k = int(np.flatnonzero(mapping < 0)[0])
        report.update(passed=False, max_deviation=float('inf'),
                      offending={'state': repr(vsp_model.states[vsp_model.sa_state[k]]),
                                 'action': list(vsp_model.sa_action[k]), 'reason': 'no raw counterpart'})
        return(report)

    def compare(q_raw, q_vsp, label):
        deviation = np.abs(q_vsp - q_raw[mapping])
        worst = int(np.argmax(deviation)) if deviation.size else 0
        if deviation.size and deviation[worst] > report['max_deviation']:
            report['max_deviation'] = float(deviation[worst])
            if deviation[worst] >= tol:
                report['passed'] = False
                report['offending'] = {'state': repr(raw_model.states[raw_model.sa_state[mapping[worst]]]),
                                       'action': list(raw_model.sa_action[mapping[worst]]), 'table': label}

    rng = np.random.default_rng(seed)
    for p in range(n_policies):
        pi_raw = random_policy(raw_model, rng)
        compare(policy_eval(raw_model, pi_raw, gamma), policy_eval(vsp_model, pi_raw[mapping], gamma),
                'policy_%d' % p)
    compare(value_iteration(raw_model, gamma), value_iteration(vsp_model, gamma), 'optimal')
    return(report)

'''Least-squares fits with identity utilities Q_i(a_i) = value of a_i
'''
FitResult = namedtuple('FitResult', ['k0', 'k', 'k_pair', 'residual'])

def _fit(payoff, action_values, pairs):
    payoff = np.asarray(payoff, dtype=float)
    if action_values is None:
        action_values = [np.arange(1, size + 1, dtype=float) for size in payoff.shape]
    grids = np.meshgrid(*[np.asarray(v, dtype=float) for v in action_values], indexing='ij')
    columns = [np.ones(payoff.size)] + [g.ravel() for g in grids]
    columns += [(grids[i] * grids[j]).ravel() for i, j in pairs]
    design = np.column_stack(columns)
    target = payoff.ravel()
    coef = scipy.linalg.lstsq(design, target)[0]
    residual = float(np.sum((target - design @ coef) ** 2))
    n = payoff.ndim
    k_pair = {pair: float(c) for pair, c in zip(pairs, coef[1 + n:])}
    return(FitResult(float(coef[0]), coef[1:1 + n].astype(float), k_pair, residual))

def additive_fit(payoff, action_values=None):
    '''Best k0 + sum_i k_i a_i fit; residual is the sum of squared errors'''
    return(_fit(payoff, action_values, []))

def mvd_fit(payoff, action_values=None):
    '''Best k0 + sum_i k_i a_i + sum_{i<j} k_ij a_i a_j fit'''
    return(_fit(payoff, action_values, list(itertools.combinations(range(np.ndim(payoff)), 2))))
