'''Value-decomposition mixers over the 2n slot utilities.

Raw forms (signed weights, used by the oracles and the reduction checks):
  additive     Q = k0 + sum_i k_i Q_i
  mvd          additive + sum_{i_d, j'} k_{i_d j'} Q_{i_d} Q_{j'}
  mvd_korder   additive + order-l terms pairing one deciding slot with l-1 distinct unmasked proxies
Trainable forms (hypernetwork weights from the state):
  AdditiveMixer (plain sum), MonotonicMixer (two-layer, absolute weights), MvdMixer (practical form
  with |f| weights and proxy utilities shifted by the tracked minimum, direct / softmax / mlp heads)
'''

import itertools
from collections import OrderedDict, namedtuple

import numpy as np

from .tensor import Tensor, as_tensor, masked, tabs, elu, relu, softmax, matmul, no_grad
from .nets import Module, Hypernet
from .vsp import DECIDING, EXECUTING, MASKED
from ..exceptions import ContractError, ConfigError, BudgetExceededError

MixerInput = namedtuple('MixerInput', ['utilities', 'phases', 'states'])

def _slot_masks(phases):
    phases = np.asarray(phases)
    n = phases.shape[-1] // 2
    unmasked = phases != MASKED
    deciding = phases[..., :n] == DECIDING
    proxy = phases[..., n:] != MASKED
    return(n, unmasked, deciding, proxy)

def masked_utilities(mixer_input):
    '''Utilities with exact zeros (and zero gradient) on masked slots'''
    _, unmasked, _, _ = _slot_masks(mixer_input.phases)
    return(masked(mixer_input.utilities, unmasked))

def mix_additive(mixer_input, k0, k):
    q = masked_utilities(mixer_input)
    return(as_tensor(k0) + (q * k).sum(axis=-1))

def _higher_order_terms(q, deciding, order, weights, n):
    '''Sum over deciding slots i and proxy combinations C (|C| = order-1) of w[i, C] q_i prod_{c in C} q_c'
    weights: (n,)*order or (B,)+(n,)*order; q: (B, 2n) already masked
    '''
    weights = as_tensor(weights)
    batched = weights.ndim == order + 1
    q_deciding = masked(q[:, :n], deciding)
    total = None
    for combo in itertools.combinations(range(n), order - 1):
        product = q_deciding
        for j in combo:
            product = product * q[:, n + j:n + j + 1]
        index = ((slice(None), slice(None)) if batched else (slice(None),)) + combo
        term = (product * weights[index]).sum(axis=-1)
        total = term if total is None else total + term
    return(total)

def mix_mvd_korder(mixer_input, k0, k, higher, order):
    '''higher: dict l -> order-l weights for 2 <= l <= order'''
    q = masked_utilities(mixer_input)
    n = q.shape[-1] // 2
    if not 1 <= order <= max(n, 1):
        raise ContractError('interaction order %s outside [1, %d]' % (order, n))
    q_tot = mix_additive(mixer_input, k0, k)
    _, _, deciding, _ = _slot_masks(mixer_input.phases)
    for l in range(2, order + 1):
        q_tot = q_tot + _higher_order_terms(q, deciding, l, higher[l], n)
    return(q_tot)

def mix_mvd(mixer_input, k0, k, k_pair):
    '''k_pair: (n, n) or (B, n, n); entry [i, j] weighs Q_i (deciding) times Q_{n+j} (unmasked proxy)'''
    return(mix_mvd_korder(mixer_input, k0, k, {2: k_pair}, 2))

class QminTracker(object):
    '''Running minimum of observed proxy utilities; offset = -min(0, minimum) keeps shifted values >= 0
    '''
    def __init__(self, q_min=0.0):
        self.q_min = min(float(q_min), 0.0)

    @property
    def offset(self):
        return(0.0 - self.q_min)

    def update(self, values):
        values = np.asarray(values, dtype=float)
        values = values[np.isfinite(values)]
        if values.size:
            self.q_min = min(self.q_min, float(values.min()))
        return(self.offset)

def tracker_update(tracker, proxy_utilities):
    return(tracker.update(proxy_utilities))

class AdditiveMixer(Module):
    family = 'additive'

    def forward(self, mixer_input, tracker=None):
        return(mix_additive(mixer_input, 0.0, 1.0))

class MonotonicMixer(Module):
    '''Q = elu(q @ |W1(s)| + b1(s)) . |w2(s)| + V(s)'''
    family = 'monotonic'

    def __init__(self, n_agents, state_dim, embed_dim=32, hypernet_hidden=64, rng=None):
        super().__init__()
        self.n_slots = 2 * n_agents
        spec = OrderedDict([('w1', (self.n_slots, embed_dim)), ('b1', (embed_dim,)),
                            ('w2', (embed_dim,)), ('v', (1,))])
        self.hypernet = Hypernet(state_dim, spec, hypernet_hidden, rng)
        self.params = self.hypernet.params

    def forward(self, mixer_input, tracker=None):
        q = masked_utilities(mixer_input)
        batch = q.shape[0]
        w = self.hypernet.forward(mixer_input.states)
        hidden = elu(matmul(q.reshape(batch, 1, self.n_slots), tabs(w['w1'])).reshape(batch, -1) + w['b1'])
        return((hidden * tabs(w['w2'])).sum(axis=-1) + w['v'].reshape(batch))

class MvdMixer(Module):
    '''Practical multiplicative mixer. Per head h:
      Q_h = f0 + sum_i |f_i| Q_i + sum_l sum_{i_d, C} |f_{i_d C}| Q_{i_d} prod_{c in C} (Q_{c'} + offset) / 2
    so dQ/dQ_{i_d} >= 0 whenever shifted proxy utilities are nonnegative. Heads are combined by
      direct : a single head
      softmax: state-conditioned softmax weights over heads
      mlp    : relu(Q_heads @ |W1| + b1) @ |w2| + b2
    '''
    family = 'mvd'

    def __init__(self, n_agents, state_dim, order=2, head_mode='mlp', heads=4, hypernet_hidden=64,
                 mlp_hidden=16, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if not 1 <= order <= n_agents:
            raise ContractError('interaction order %s outside [1, %d]' % (order, n_agents))
        if head_mode not in ('direct', 'softmax', 'mlp'):
            raise ConfigError('unknown mixer.head_mode %s' % head_mode)
        self.n_agents, self.order, self.head_mode = n_agents, order, head_mode
        self.heads = 1 if head_mode == 'direct' else int(heads)
        H, n = self.heads, n_agents
        spec = OrderedDict([('f0', (H,)), ('f', (H, 2 * n))])
        for l in range(2, order + 1):
            spec['f%d' % l] = (H,) + (n,) * l
        if head_mode == 'softmax':
            spec['head_logits'] = (H,)
        self.hypernet = Hypernet(state_dim, spec, hypernet_hidden, rng)
        self.params = self.hypernet.params
        if head_mode == 'mlp':
            bound = 1.0 / np.sqrt(H)
            self.params.add('head.w1', rng.uniform(-bound, bound, size=(H, mlp_hidden)))
            self.params.add('head.b1', rng.uniform(-bound, bound, size=(mlp_hidden,)))
            bound = 1.0 / np.sqrt(mlp_hidden)
            self.params.add('head.w2', rng.uniform(-bound, bound, size=(mlp_hidden, 1)))
            self.params.add('head.b2', rng.uniform(-bound, bound, size=(1,)))

    def head_values(self, mixer_input, offset, weights=None):
        '''(B, H) head outputs'''
        w = weights if weights is not None else self.hypernet.forward(mixer_input.states)
        q = masked_utilities(mixer_input)
        n, _, deciding, proxy = _slot_masks(mixer_input.phases)
        batch = q.shape[0]
        values = w['f0'] + (tabs(w['f']) * q.reshape(batch, 1, 2 * n)).sum(axis=-1)
        if self.order < 2:
            return(values)
        q_deciding = masked(q[:, :n], deciding).reshape(batch, 1, n)
        shifted = masked((q[:, n:] + offset) * 0.5, proxy)
        for l in range(2, self.order + 1):
            coef = tabs(w['f%d' % l])
            for combo in itertools.combinations(range(n), l - 1):
                product = None
                for j in combo:
                    factor = shifted[:, j:j + 1]
                    product = factor if product is None else product * factor
                term = coef[(slice(None), slice(None), slice(None)) + combo] * q_deciding
                values = values + term.sum(axis=-1) * product
        return(values)

    def forward(self, mixer_input, tracker=None):
        offset = tracker.offset if tracker is not None else 0.0
        w = self.hypernet.forward(mixer_input.states)
        heads = self.head_values(mixer_input, offset, w)
        batch = heads.shape[0]
        if self.head_mode == 'direct':
            return(heads.reshape(batch))
        if self.head_mode == 'softmax':
            return((softmax(w['head_logits'], axis=-1) * heads).sum(axis=-1))
        p = self.params
        hidden = relu(matmul(heads, tabs(p['head.w1'])) + p['head.b1'])
        return(matmul(hidden, tabs(p['head.w2'])).reshape(batch) + p['head.b2'])

    def credit_weights(self, mixer_input):
        '''Mean over heads of |f_i| (B, 2n) and of the pair weights |f_{i_d j'}| (B, n, n),
        NaN where the pair is not (deciding, unmasked proxy)'''
        with no_grad():
            w = self.hypernet.forward(mixer_input.states)
            slot = np.abs(w['f'].data).mean(axis=1)
            n, _, deciding, proxy = _slot_masks(mixer_input.phases)
            if self.order < 2:
                pair = np.zeros((slot.shape[0], n, n))
            else:
                pair = np.abs(w['f2'].data).mean(axis=1)
            valid = deciding[:, :, None] & proxy[:, None, :]
            return(slot, np.where(valid, pair, np.nan))

def make_mixer(mixer_conf, n_agents, state_dim, rng=None):
    family = mixer_conf['family']
    if family == 'additive':
        return(AdditiveMixer())
    if family == 'monotonic':
        return(MonotonicMixer(n_agents, state_dim, mixer_conf['embed_dim'], mixer_conf['hypernet_hidden'], rng))
    if family == 'mvd':
        return(MvdMixer(n_agents, state_dim, mixer_conf['order'], mixer_conf['head_mode'], mixer_conf['heads'],
                        mixer_conf['hypernet_hidden'], mixer_conf['mlp_hidden'], rng))
    raise ConfigError('unknown mixer.family %s' % family)

'''IGM checks
'''
IgmVerdict = namedtuple('IgmVerdict', ['holds', 'joint_argmax', 'individual_argmax', 'gap'])

def bind_mixer(mixer, phases, state, tracker=None):
    '''Turn a trainable mixer into fn(U (J, 2n) ndarray) -> (J,) ndarray for one fixed state'''
    phases = np.asarray(phases)
    state = np.asarray(state, dtype=float)
    def mixer_fn(utilities):
        count = utilities.shape[0]
        with no_grad():
            mixer_input = MixerInput(Tensor(utilities), np.tile(phases, (count, 1)), np.tile(state, (count, 1)))
            return(mixer.forward(mixer_input, tracker).data)
    return(mixer_fn)

def check_igm(mixer_fn, tables, phases, atol=1e-9, max_joint_actions=1000000):
    '''Exhaustive IGM check for one state.
    - mixer_fn: fn(U (J, 2n)) -> (J,) global values
    - tables  : per-slot utility vectors; non-deciding slots contribute their single entry (masked: 0)
    - phases  : per-slot phases; only deciding slots are enumerated
    The verdict holds when the per-slot argmax tuple is the lowest-id joint argmax or ties with it.
    '''
    phases = list(phases)
    deciding = [j for j, phase in enumerate(phases) if phase == DECIDING]
    sizes = [len(tables[j]) for j in deciding]
    total = int(np.prod(sizes)) if sizes else 1
    if total > max_joint_actions:
        raise BudgetExceededError('%d joint actions exceed the budget of %d' % (total, max_joint_actions), total)
    joint = np.array(list(itertools.product(*[range(s) for s in sizes])), dtype=int).reshape(total, len(sizes))
    utilities = np.zeros((total, len(phases)))
    for j, phase in enumerate(phases):
        if phase != DECIDING and phase != MASKED:
            utilities[:, j] = np.asarray(tables[j], dtype=float)[0]
    for k, j in enumerate(deciding):
        utilities[:, j] = np.asarray(tables[j], dtype=float)[joint[:, k]]
    values = np.asarray(mixer_fn(utilities), dtype=float)
    best = int(np.argmax(values))
    individual = tuple(int(np.argmax(tables[j])) for j in deciding)
    individual_index = int(np.ravel_multi_index(individual, sizes)) if sizes else 0
    gap = float(values[best] - values[individual_index])
    holds = tuple(joint[best]) == individual or gap <= atol
    return(IgmVerdict(bool(holds), tuple(int(a) for a in joint[best]), individual, gap))

'''Credit traces
'''
def dump_credit_trace(mixer, utilities, phases, states, tracker=None):
    '''One record per step of an episode.
    - utilities: (T, 2n) chosen-action utilities; phases (T, 2n); states (T, state_dim)
    Pair weights are NaN except for (deciding, unmasked proxy) pairs.
    '''
    utilities, phases = np.asarray(utilities, dtype=float), np.asarray(phases)
    n = phases.shape[-1] // 2
    mixer_input = MixerInput(Tensor(utilities), phases, np.asarray(states, dtype=float))
    if hasattr(mixer, 'credit_weights'):
        slot_weights, pair_weights = mixer.credit_weights(mixer_input)
    else:
        slot_weights = np.full(utilities.shape, np.nan)
        pair_weights = np.full((utilities.shape[0], n, n), np.nan)
    with no_grad():
        q_tot = mixer.forward(mixer_input, tracker).data
    records = []
    for t in range(utilities.shape[0]):
        unmasked = phases[t] != MASKED
        records.append({'step': t,
                        'phases': phases[t].tolist(),
                        'q_values': np.where(unmasked, utilities[t], np.nan).tolist(),
                        'slot_weights': slot_weights[t].tolist(),
                        'pair_weights': pair_weights[t].tolist(),
                        'q_tot': float(q_tot[t])})
    return(records)
