'''Verification suite: exact oracles and gradient checks, reported per named test group.
Every group returns {'test', 'max_deviation', 'passed', ...}.
'''

import time

import numpy as np

from .logger import RunLogger
from .utils.tensor import Tensor, gradient_check, stack
from .utils.nets import GruAgentNet, gru_step
from .utils.envs import AsyncMatrixGame, AsyncGridworld
from .utils.vsp import (VspEnv, PassthroughEnv, wrap_padding, check_pair_coherence as pair_violations,
                        DECIDING, EXECUTING, MASKED)
from .utils.mixers import (MixerInput, QminTracker, AdditiveMixer, MonotonicMixer, MvdMixer, mix_additive,
                           mix_mvd, mix_mvd_korder, check_igm, bind_mixer)
from .utils.oracle import vsp_equivalence_test, additive_fit, mvd_fit

PRODUCT_PAYOFF = np.array([[1.0, 2.0], [2.0, 4.0]])

def random_phases(n_agents, batch, rng):
    '''Random valid slot phases: each agent decides or executes; a proxy is live iff its agent executes'''
    executing = rng.random((batch, n_agents)) < 0.5
    real = np.where(executing, EXECUTING, DECIDING)
    proxy = np.where(executing, EXECUTING, MASKED)
    return(np.concatenate([real, proxy], axis=1))

def random_mixer_input(n_agents, batch, state_dim, rng, requires_grad=False, scale=2.0):
    utilities = Tensor(rng.normal(scale=scale, size=(batch, 2 * n_agents)), requires_grad=requires_grad)
    return(MixerInput(utilities, random_phases(n_agents, batch, rng), rng.normal(size=(batch, state_dim))))

def build_mixer(kind, n_agents, state_dim, rng, hidden=8, heads=3):
    if kind == 'additive':
        return(AdditiveMixer())
    if kind == 'monotonic':
        return(MonotonicMixer(n_agents, state_dim, embed_dim=4, hypernet_hidden=hidden, rng=rng))
    family, _, head_mode = kind.partition(':')
    order = int(family[3:]) if len(family) > 3 else 2
    return(MvdMixer(n_agents, state_dim, order=order, head_mode=head_mode or 'direct', heads=heads,
                    hypernet_hidden=hidden, mlp_hidden=4, rng=rng))

GRADIENT_EPS = 1e-5
# one-sided slopes further apart than this mark a relu or abs kink inside the step
KINK_TOL = 1e-3
PRACTICAL_MIXERS = ['mvd2:direct', 'mvd2:softmax', 'mvd2:mlp', 'mvd3:mlp']

def _tracked(mixer_input):
    tracker = QminTracker()
    n = mixer_input.utilities.shape[-1] // 2
    tracker.update(mixer_input.utilities.data[:, n:][mixer_input.phases[:, n:] != MASKED])
    return(tracker)

def _group(name, deviation, passed, **detail):
    result = {'test': name, 'max_deviation': float(deviation), 'passed': bool(passed)}
    result.update(detail)
    return(result)

'''Equivalence of raw and proxy-wrapped models
'''
def oracle_gridworld(oracle_conf, durations=(1, 2, 3), seed=0):
    return(AsyncGridworld(grid_size=3, durations=list(durations), episode_limit=oracle_conf['gridworld_episode_limit'],
                          seed=seed))

def check_equivalence_matrix(oracle_conf, gamma, n_policies):
    report = vsp_equivalence_test(AsyncMatrixGame(), gamma, n_policies, max_states=oracle_conf['max_states'],
                                  tol=1e-10, name='equivalence_matrix')
    return(report)

def check_equivalence_gridworld(oracle_conf, gamma, n_policies):
    return(vsp_equivalence_test(oracle_gridworld(oracle_conf), gamma, n_policies,
                                max_states=oracle_conf['gridworld_max_states'], tol=1e-10,
                                name='equivalence_gridworld'))

'''Function-class separation
'''
def check_separation():
    additive, mvd = additive_fit(PRODUCT_PAYOFF), mvd_fit(PRODUCT_PAYOFF)
    passed = additive.residual > 1e-3 and mvd.residual < 1e-10
    return(_group('function_class_separation', mvd.residual, passed,
                  additive_residual=additive.residual, mvd_residual=mvd.residual,
                  mvd_pair_weight=mvd.k_pair[(0, 1)]))

'''Gradient checks
'''
def agent_gradient_error(rng, steps=3, batch=2, max_coords=4):
    net = GruAgentNet(input_dim=5, hidden_dim=6, action_count=4, rng=rng)
    obs = rng.normal(size=(steps, batch, 5))
    prev = np.eye(4)[rng.integers(4, size=(steps, batch))]
    weights = rng.normal(size=(steps, batch, 4))
    h0 = Tensor(rng.normal(scale=0.5, size=(batch, 6)), requires_grad=True)
    def loss_fn():
        h, outs = h0, []
        for t in range(steps):
            q, h = gru_step(net, obs[t], h, prev[t])
            outs.append(q)
        return((stack(outs) * weights).sum())
    return(gradient_check(loss_fn, list(net.params.values()) + [h0], max_coords=max_coords, rng=rng, eps=GRADIENT_EPS,
                          kink_tol=KINK_TOL))

def mixer_gradient_error(kind, rng, n_agents=3, batch=4, state_dim=5, max_coords=4):
    mixer_input = random_mixer_input(n_agents, batch, state_dim, rng, requires_grad=True)
    weights = rng.normal(size=batch)
    tensors = [mixer_input.utilities]
    if kind in ('raw_additive', 'raw_mvd', 'raw_korder'):
        k0 = Tensor(rng.normal(), requires_grad=True)
        k = Tensor(rng.normal(size=2 * n_agents), requires_grad=True)
        pair = Tensor(rng.normal(size=(n_agents, n_agents)), requires_grad=True)
        triple = Tensor(rng.normal(size=(n_agents,) * 3), requires_grad=True)
        forward = {'raw_additive': lambda: mix_additive(mixer_input, k0, k),
                   'raw_mvd': lambda: mix_mvd(mixer_input, k0, k, pair),
                   'raw_korder': lambda: mix_mvd_korder(mixer_input, k0, k, {2: pair, 3: triple}, 3)}[kind]
        tensors += [k0, k, pair, triple]
    else:
        mixer = build_mixer(kind, n_agents, state_dim, rng)
        tracker = _tracked(mixer_input)
        forward = lambda: mixer.forward(mixer_input, tracker)
        tensors += list(mixer.params.values())
    return(gradient_check(lambda: (forward() * weights).sum(), tensors, max_coords=max_coords, rng=rng, eps=GRADIENT_EPS,
                          kink_tol=KINK_TOL))

GRADIENT_KINDS = ['raw_additive', 'raw_mvd', 'raw_korder', 'additive', 'monotonic'] + PRACTICAL_MIXERS

def check_gradients(instances, seed=0):
    rng = np.random.default_rng(seed)
    errors = {'agent': max(agent_gradient_error(rng) for _ in range(instances))}
    for kind in GRADIENT_KINDS:
        errors[kind] = max(mixer_gradient_error(kind, rng) for _ in range(instances))
    worst = max(errors.values())
    return(_group('gradient_checks', worst, worst < 1e-4, instances=instances, per_network=errors))

'''IGM and monotonicity of the practical mixers
'''
def random_igm_case(n_agents, n_actions, state_dim, rng):
    phases = random_phases(n_agents, 1, rng)[0]
    tables = []
    for phase in phases:
        tables.append(rng.normal(scale=2.0, size=n_actions) if phase == DECIDING else
                      rng.normal(scale=2.0, size=1) if phase == EXECUTING else np.zeros(1))
    return(phases, tables, rng.normal(size=state_dim))

def check_igm_monotonicity(draws, seed=0, n_agents=3, n_actions=3, state_dim=4):
    rng = np.random.default_rng(seed)
    violations, worst_gap, min_derivative = 0, 0.0, np.inf
    for draw in range(draws):
        kind = PRACTICAL_MIXERS[draw % len(PRACTICAL_MIXERS)]
        mixer = build_mixer(kind, n_agents, state_dim, rng)
        phases, tables, state = random_igm_case(n_agents, n_actions, state_dim, rng)
        tracker = QminTracker()
        tracker.update([t[0] for t, p in zip(tables[n_agents:], phases[n_agents:]) if p != MASKED])
        verdict = check_igm(bind_mixer(mixer, phases, state, tracker), tables, phases)
        violations += int(not verdict.holds)
        worst_gap = max(worst_gap, verdict.gap)
        # derivative probe at random points
        probe = random_mixer_input(n_agents, 8, state_dim, rng, requires_grad=True)
        probe_tracker = _tracked(probe)
        mixer.forward(probe, probe_tracker).sum().backward()
        deciding = probe.phases[:, :n_agents] == DECIDING
        if deciding.any():
            min_derivative = min(min_derivative, float(probe.utilities.grad[:, :n_agents][deciding].min()))
    min_derivative = 0.0 if min_derivative == np.inf else min_derivative
    passed = violations == 0 and min_derivative >= 0.0
    return(_group('igm_monotonicity', max(worst_gap, -min_derivative, 0.0), passed, draws=draws,
                  violations=violations, min_deciding_derivative=min_derivative))

'''Reduction equalities of the raw forms
'''
def check_reductions(count, seed=0, n_agents=3):
    rng = np.random.default_rng(seed)
    mixer_input = random_mixer_input(n_agents, count, 1, rng)
    k0, k = rng.normal(size=count), rng.normal(size=(count, 2 * n_agents))
    pair = rng.normal(size=(count, n_agents, n_agents))
    additive = mix_additive(mixer_input, k0, k).data
    deviations = [
        np.max(np.abs(mix_mvd_korder(mixer_input, k0, k, {}, 1).data - additive)),
        np.max(np.abs(mix_mvd_korder(mixer_input, k0, k, {2: pair}, 2).data - mix_mvd(mixer_input, k0, k, pair).data)),
        np.max(np.abs(mix_mvd(mixer_input, k0, k, np.zeros_like(pair)).data - additive)),
    ]
    worst = float(max(deviations))
    return(_group('reduction_equalities', worst, worst == 0.0, inputs=count))

'''Proxy bookkeeping
'''
def _random_decisions(wrapper, rng):
    return({j: int(rng.choice(sorted(allowed))) for j, allowed in enumerate(wrapper.action_mask())
            if wrapper.phases()[j] == DECIDING})

def check_vsp_pair_coherence(episodes, seed=0, wrapper_class=VspEnv):
    rng = np.random.default_rng(seed)
    wrapper = wrapper_class(AsyncGridworld(grid_size=3, durations=[1, 2, 3], episode_limit=20, seed=seed))
    violations, steps = [], 0
    for _ in range(episodes):
        wrapper.reset(seed)
        done = False
        while not done:
            violations += pair_violations(wrapper)
            _, _, done = wrapper.step(_random_decisions(wrapper, rng))
            steps += 1
    return(_group('vsp_pair_coherence', len(violations), not violations, steps=steps,
                  first_violation=violations[0] if violations else None))


def check_reward_transparency(episodes, seed=0, gamma=0.99):
    '''Identical decision sequences through the raw env and every wrapper yield identical rewards'''
    rng = np.random.default_rng(seed)
    worst = 0.0
    for episode in range(episodes):
        make = lambda: AsyncGridworld(grid_size=3, durations=[1, 2, 3], episode_limit=20, seed=seed)
        raw = make()
        wrappers = [VspEnv(make()), wrap_padding(make(), 'blank'), wrap_padding(make(), 'recent')]
        result = raw.reset(seed)
        for wrapper in wrappers:
            wrapper.reset(seed)
        returns = np.zeros(1 + len(wrappers))
        t, done = 0, False
        while not done:
            joint = [int(rng.integers(raw.action_count)) if m else raw.blank for m in result.decision_mask]
            result = raw.step(joint)
            returns[0] += gamma ** t * result.reward
            for w, wrapper in enumerate(wrappers):
                decisions = {i: joint[i] for i in range(raw.n_agents) if wrapper.phases()[i] == DECIDING}
                _, reward, _ = wrapper.step(decisions)
                returns[1 + w] += gamma ** t * reward
            t, done = t + 1, result.terminated
        worst = max(worst, float(np.max(np.abs(returns[1:] - returns[0]))))
    return(_group('reward_transparency', worst, worst == 0.0, episodes=episodes))

def check_synchronous_degeneration(episodes, seed=0):
    '''With unit durations no proxy is ever live and VSP matches the passthrough wrapper step by step'''
    rng = np.random.default_rng(seed)
    live_proxies, mismatches = 0, 0
    for _ in range(episodes):
        vsp = VspEnv(AsyncGridworld(grid_size=3, durations=[1, 1, 1], episode_limit=10, seed=seed))
        plain = PassthroughEnv(AsyncGridworld(grid_size=3, durations=[1, 1, 1], episode_limit=10, seed=seed))
        vsp.reset(seed)
        plain.reset(seed)
        done = False
        while not done:
            n = vsp.n_agents
            live_proxies += sum(p != MASKED for p in vsp.phases()[n:])
            decisions = _random_decisions(vsp, rng)
            ext_a, reward_a, done = vsp.step(decisions)
            ext_b, reward_b, _ = plain.step(decisions)
            mismatches += int(reward_a != reward_b or not np.array_equal(ext_a.vector(), ext_b.vector()))
    return(_group('synchronous_degeneration', live_proxies + mismatches, live_proxies + mismatches == 0,
                  episodes=episodes))

def check_qmin_tracker(steps, seed=0):
    rng = np.random.default_rng(seed)
    tracker = QminTracker()
    offsets, worst = [tracker.offset], 0.0
    for _ in range(steps):
        values = rng.normal(loc=rng.normal(), scale=3.0, size=5)
        tracker.update(values)
        offsets.append(tracker.offset)
        worst = max(worst, float(-(values + tracker.offset).min()))
    monotone = bool(np.all(np.diff(offsets) >= 0.0))
    return(_group('qmin_tracker', max(worst, 0.0), monotone and worst <= 0.0, steps=steps))

def run_verification(config, quick=False, logger=None):
    '''Run every group; return the list of group results'''
    logger = logger if logger is not None else RunLogger(name='verify', config=config, log_config=False)
    oracle, gamma = config.oracle, config.train['gamma']
    scale = 10 if quick else 1
    groups = [
        ('Raw vs. proxy equivalence: matrix game', lambda: check_equivalence_matrix(oracle, gamma, oracle['policies'])),
        ('Raw vs. proxy equivalence: gridworld',
         lambda: check_equivalence_gridworld(oracle, gamma, max(oracle['policies'] // (5 if quick else 1), 1))),
        ('Function-class separation', check_separation),
        ('Gradient checks', lambda: check_gradients(max(100 // scale, 1))),
        ('IGM and monotonicity', lambda: check_igm_monotonicity(max(1000 // scale, 1))),
        ('Reduction equalities', lambda: check_reductions(1000)),
        ('Proxy pair coherence', lambda: check_vsp_pair_coherence(max(50 // scale, 1))),
        ('Reward transparency', lambda: check_reward_transparency(max(50 // scale, 1))),
        ('Synchronous degeneration', lambda: check_synchronous_degeneration(max(20 // scale, 1))),
        ('Q min tracker', lambda: check_qmin_tracker(1000)),
    ]
    results = []
    for label, run in groups:
        logger.log_step_start(label, sub=True)
        start_time = time.time()
        result = run()
        results.append(result)
        logger.log_result(result['test'], 'passed' if result['passed'] else 'FAILED (max deviation %g)' % result['max_deviation'])
        logger.log_step_end(label, time.time() - start_time, sub=True)
    return(results)
