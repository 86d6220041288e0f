'''Parameter containers, layers, recurrent agent network, hypernetworks and Adam
'''

import copy
from collections import OrderedDict

import numpy as np

from .tensor import Tensor, as_tensor, matmul, transpose, concat, relu, sigmoid, tanh, getitem
from ..exceptions import DimensionError, NonFiniteError

class ParameterSet(object):
    '''Ordered name -> Tensor mapping of trainable parameters
    '''
    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, data):
        if name in self._params:
            raise KeyError('parameter %s already exists' % name)
        self._params[name] = Tensor(data, requires_grad=True)
        return(self._params[name])

    def __getitem__(self, name):
        return(self._params[name])

    def __contains__(self, name):
        return(name in self._params)

    def __len__(self):
        return(len(self._params))

    def __iter__(self):
        return(iter(self._params))

    def items(self):
        return(self._params.items())

    def values(self):
        return(self._params.values())

    def names(self):
        return(list(self._params.keys()))

    def num_values(self):
        return(int(sum(p.size for p in self._params.values())))

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def state_dict(self):
        return(OrderedDict((name, p.data.copy()) for name, p in self._params.items()))

    def load_state_dict(self, state):
        missing = [name for name in self._params if name not in state]
        if missing:
            raise KeyError('missing parameters: %s' % ', '.join(missing))
        for name, p in self._params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError('parameter %s: expected shape %s, got %s' % (name, p.shape, value.shape))
            p.data[...] = value

    def copy_from(self, other):
        '''Hard copy of another set's values (target network sync)'''
        self.load_state_dict(other.state_dict())

    @staticmethod
    def union(named_sets):
        '''Combine sets under name prefixes; tensors are shared, not copied
        - named_sets: OrderedDict prefix -> ParameterSet
        '''
        merged = ParameterSet()
        for prefix, params in named_sets.items():
            for name, p in params.items():
                merged._params['%s.%s' % (prefix, name)] = p
        return(merged)

class Module(object):
    def __init__(self):
        self.params = ParameterSet()

    def parameters(self):
        return(self.params)

    def clone(self):
        return(copy.deepcopy(self))

def init_linear(params, name, in_dim, out_dim, rng):
    '''Weight (out_dim, in_dim) and bias (out_dim,) drawn from U(-1/sqrt(in_dim), 1/sqrt(in_dim))
    '''
    bound = 1.0 / np.sqrt(in_dim)
    params.add(name + '.weight', rng.uniform(-bound, bound, size=(out_dim, in_dim)))
    params.add(name + '.bias', rng.uniform(-bound, bound, size=(out_dim,)))

def forward_linear(x, weight, bias):
    '''Affine map x @ W^T + b for x of shape (..., in_dim), W of shape (out_dim, in_dim)
    '''
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or bias.shape != (weight.shape[0],):
        raise DimensionError('weight %s and bias %s do not form a layer' % (weight.shape, bias.shape))
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError('input dim %d does not match weight %s' % (x.shape[-1], weight.shape))
    if x.ndim == 1:
        return((matmul(x.reshape(1, -1), transpose(weight)) + bias).reshape(weight.shape[0]))
    return(matmul(x, transpose(weight)) + bias)

def linear(params, name, x):
    return(forward_linear(x, params[name + '.weight'], params[name + '.bias']))

class GruAgentNet(Module):
    '''Input projection -> GRU cell -> per-action utilities.
    Inputs per slot: observation features (agent id one-hot included) and the previous action one-hot.
    '''
    def __init__(self, input_dim, hidden_dim, action_count, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim, self.hidden_dim, self.action_count = input_dim, hidden_dim, action_count
        init_linear(self.params, 'fc1', input_dim + action_count, hidden_dim, rng)
        bound = 1.0 / np.sqrt(hidden_dim)
        for name in ['w_ih', 'w_hh']:
            self.params.add('gru.' + name, rng.uniform(-bound, bound, size=(3 * hidden_dim, hidden_dim)))
        for name in ['b_ih', 'b_hh']:
            self.params.add('gru.' + name, rng.uniform(-bound, bound, size=(3 * hidden_dim,)))
        init_linear(self.params, 'fc2', hidden_dim, action_count, rng)

    def init_hidden(self, batch):
        return(Tensor(np.zeros((batch, self.hidden_dim))))

def gru_step(net, obs, h_prev, a_prev_onehot):
    '''One recurrent step; returns (q_values (..., action_count), h_next (..., hidden_dim))
    r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - z) * n + z * h
    '''
    obs, h_prev, a_prev_onehot = as_tensor(obs), as_tensor(h_prev), as_tensor(a_prev_onehot)
    if obs.shape[-1] != net.input_dim or a_prev_onehot.shape[-1] != net.action_count:
        raise DimensionError('agent input dims %s / %s do not match net (%d, %d)' % (
            obs.shape, a_prev_onehot.shape, net.input_dim, net.action_count))
    if h_prev.shape[-1] != net.hidden_dim:
        raise DimensionError('hidden dim %d does not match net %d' % (h_prev.shape[-1], net.hidden_dim))
    p, H = net.params, net.hidden_dim
    x = relu(linear(p, 'fc1', concat([obs, a_prev_onehot], axis=-1)))
    gi = forward_linear(x, p['gru.w_ih'], p['gru.b_ih'])
    gh = forward_linear(h_prev, p['gru.w_hh'], p['gru.b_hh'])
    def part(t, k):
        return(getitem(t, (Ellipsis, slice(k * H, (k + 1) * H))))
    r = sigmoid(part(gi, 0) + part(gh, 0))
    z = sigmoid(part(gi, 1) + part(gh, 1))
    n = tanh(part(gi, 2) + r * part(gh, 2))
    h_next = (1.0 - z) * n + z * h_prev
    q_values = linear(p, 'fc2', h_next)
    return(q_values, h_next)

class Hypernet(Module):
    '''State-conditioned weight generator: one two-layer perceptron per weight group.
    - output_spec: OrderedDict group name -> weight shape (per sample)
    '''
    def __init__(self, state_dim, output_spec, hidden_dim=64, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim, self.hidden_dim = state_dim, hidden_dim
        self.output_spec = OrderedDict((name, tuple(shape)) for name, shape in output_spec.items())
        for name, shape in self.output_spec.items():
            init_linear(self.params, name + '.l1', state_dim, hidden_dim, rng)
            init_linear(self.params, name + '.l2', hidden_dim, int(np.prod(shape)), rng)

    def output_dims(self):
        return(OrderedDict((name, int(np.prod(shape))) for name, shape in self.output_spec.items()))

    def forward(self, states):
        '''states (B, state_dim) -> dict name -> Tensor (B,) + shape'''
        states = as_tensor(states)
        if states.shape[-1] != self.state_dim:
            raise DimensionError('state dim %d does not match hypernet %d' % (states.shape[-1], self.state_dim))
        batch = states.shape[0]
        out = OrderedDict()
        for name, shape in self.output_spec.items():
            hidden = relu(linear(self.params, name + '.l1', states))
            out[name] = linear(self.params, name + '.l2', hidden).reshape((batch,) + shape)
        return(out)

def clip_grad_norm(params, max_norm):
    '''Scale all gradients so their joint L2 norm is at most max_norm; return the norm before clipping
    '''
    grads = [p.grad for p in params.values() if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return(total)

def adam_step(params, lr, betas, eps, state=None):
    '''In-place Adam update of every parameter with a gradient.
    - state: dict holding the step count and first/second moments; advanced in place
    '''
    state = state if state is not None else {}
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteError('non-finite gradient in parameter %s' % name)
    beta1, beta2 = betas
    state['t'] = state.get('t', 0) + 1
    t = state['t']
    m_all, v_all = state.setdefault('m', {}), state.setdefault('v', {})
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = beta1 * m_all.get(name, np.zeros_like(p.data)) + (1.0 - beta1) * g
        v = beta2 * v_all.get(name, np.zeros_like(p.data)) + (1.0 - beta2) * g * g
        m_all[name], v_all[name] = m, v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return(state)

class Adam(object):
    def __init__(self, params, lr=0.0005, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.state = {}

    def step(self):
        adam_step(self.params, self.lr, self.betas, self.eps, self.state)

    def zero_grad(self):
        self.params.zero_grad()
