'''Reverse-mode automatic differentiation over numpy float64 arrays.

Every differentiable operation records its parents and a backward function on
the result; backward() walks the recorded graph in reverse topological order
and releases it afterwards, so each training step builds a fresh graph.
'''

import threading
from contextlib import contextmanager

import numpy as np

from ..exceptions import DimensionError, ContractError

_grad_mode = threading.local()

def is_grad_enabled():
    return(getattr(_grad_mode, 'enabled', True))

@contextmanager
def no_grad():
    '''Disable graph recording in the current thread (rollouts, targets, oracles)
    '''
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous

class Tensor(object):
    # make ndarray (op) Tensor dispatch to the Tensor's reflected operators
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.op = 'leaf'

    @property
    def shape(self):
        return(self.data.shape)

    @property
    def size(self):
        return(self.data.size)

    @property
    def ndim(self):
        return(self.data.ndim)

    def numpy(self):
        return(self.data)

    def item(self):
        return(float(self.data.reshape(-1)[0]))

    def detach(self):
        return(Tensor(self.data))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return('Tensor(shape=%s, op=%s, requires_grad=%s)' % (self.shape, self.op, self.requires_grad))

    def __len__(self):
        return(self.data.shape[0])

    # operators
    def __add__(self, other): return(add(self, other))
    def __radd__(self, other): return(add(other, self))
    def __sub__(self, other): return(sub(self, other))
    def __rsub__(self, other): return(sub(other, self))
    def __mul__(self, other): return(mul(self, other))
    def __rmul__(self, other): return(mul(other, self))
    def __truediv__(self, other): return(div(self, other))
    def __rtruediv__(self, other): return(div(other, self))
    def __neg__(self): return(neg(self))
    def __matmul__(self, other): return(matmul(self, other))
    def __rmatmul__(self, other): return(matmul(other, self))
    def __pow__(self, exponent): return(power(self, exponent))
    def __getitem__(self, index): return(getitem(self, index))

    def sum(self, axis=None, keepdims=False): return(tsum(self, axis, keepdims))
    def mean(self, axis=None, keepdims=False): return(mean(self, axis, keepdims))
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)): shape = tuple(shape[0])
        return(reshape(self, shape))
    def transpose(self, *axes): return(transpose(self, axes if axes else None))
    def abs(self): return(tabs(self))
    def relu(self): return(relu(self))
    def sigmoid(self): return(sigmoid(self))
    def tanh(self): return(tanh(self))
    def exp(self): return(exp(self))

    def backward(self):
        backward(self)

def as_tensor(x):
    return(x if isinstance(x, Tensor) else Tensor(x))

def _result(data, parents, backward_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return(out)

def unbroadcast(grad, shape):
    '''Sum grad over the axes numpy broadcasting added or stretched to reach grad.shape
    '''
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return(grad.reshape(shape))

'''Elementwise arithmetic (numpy broadcasting)
'''
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    def backward_fn(g):
        return(unbroadcast(g, a.shape), unbroadcast(g, b.shape))
    return(_result(a.data + b.data, (a, b), backward_fn, 'add'))

def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    def backward_fn(g):
        return(unbroadcast(g, a.shape), unbroadcast(-g, b.shape))
    return(_result(a.data - b.data, (a, b), backward_fn, 'sub'))

def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    def backward_fn(g):
        return(unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape))
    return(_result(a.data * b.data, (a, b), backward_fn, 'mul'))

def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    def backward_fn(g):
        return(unbroadcast(g / b.data, a.shape),
               unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return(_result(a.data / b.data, (a, b), backward_fn, 'div'))

def neg(a):
    a = as_tensor(a)
    return(_result(-a.data, (a,), lambda g: (-g,), 'neg'))

def power(a, exponent):
    '''a ** exponent for a constant real exponent'''
    a = as_tensor(a)
    exponent = float(exponent)
    def backward_fn(g):
        return(g * exponent * np.power(a.data, exponent - 1.0),)
    return(_result(np.power(a.data, exponent), (a,), backward_fn, 'pow'))

def matmul(a, b):
    '''Matrix product of operands with at least 2 dimensions; leading dimensions broadcast
    '''
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError('matmul needs operands with >= 2 dims, got %s and %s' % (a.shape, b.shape))
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError('matmul inner dimensions differ: %s @ %s' % (a.shape, b.shape))
    def backward_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return(unbroadcast(ga, a.shape), unbroadcast(gb, b.shape))
    return(_result(np.matmul(a.data, b.data), (a, b), backward_fn, 'matmul'))

'''Reductions and shape operations
'''
def _normalize_axes(axis, ndim):
    if axis is None:
        return(tuple(range(ndim)))
    if not isinstance(axis, (tuple, list)):
        axis = (axis,)
    return(tuple(sorted(ax % ndim for ax in axis)))

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    def backward_fn(g):
        if not keepdims:
            for ax in axes:
                g = np.expand_dims(g, ax)
        return(np.broadcast_to(g, a.shape).copy(),)
    return(_result(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward_fn, 'sum'))

def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return(tsum(a, axis, keepdims) / float(count))

def reshape(a, shape):
    a = as_tensor(a)
    return(_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), 'reshape'))

def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return(_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), 'transpose'))

def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return(all(item is Ellipsis or item is None or isinstance(item, (slice, int, np.integer)) for item in items))

def getitem(a, index):
    a = as_tensor(a)
    basic = _is_basic_index(index)
    def backward_fn(g):
        grad = np.zeros_like(a.data)
        if basic:
            grad[index] += g
        else:
            # repeated fancy indices accumulate
            np.add.at(grad, index, g)
        return(grad,)
    return(_result(a.data[index], (a,), backward_fn, 'getitem'))

def gather(a, indices, axis=-1):
    '''Pick one entry per row along [axis]; indices has a's shape without that axis
    '''
    a = as_tensor(a)
    idx = np.expand_dims(np.asarray(indices, dtype=np.int64), axis)
    def backward_fn(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis=axis)
        return(grad,)
    data = np.take_along_axis(a.data, idx, axis=axis)
    return(_result(np.squeeze(data, axis=axis), (a,), backward_fn, 'gather'))

def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    def backward_fn(g):
        return(tuple(np.split(g, splits, axis=axis)))
    return(_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward_fn, 'concat'))

def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    def backward_fn(g):
        return(tuple(np.take(g, i, axis=axis) for i in range(len(tensors))))
    return(_result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward_fn, 'stack'))

def masked(a, mask):
    '''Exact zeros where mask is False; no gradient flows to masked entries
    '''
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    def backward_fn(g):
        return(unbroadcast(np.where(mask, g, 0.0), a.shape),)
    return(_result(np.where(mask, a.data, 0.0), (a,), backward_fn, 'masked'))

'''Nonlinearities
'''
def tabs(a):
    a = as_tensor(a)
    return(_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), 'abs'))

def relu(a):
    a = as_tensor(a)
    return(_result(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),), 'relu'))

def elu(a):
    a = as_tensor(a)
    negative = np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0, a.data, negative)
    return(_result(out, (a,), lambda g: (g * np.where(a.data > 0, 1.0, negative + 1.0),), 'elu'))

def sigmoid(a):
    a = as_tensor(a)
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return(_result(s, (a,), lambda g: (g * s * (1.0 - s),), 'sigmoid'))

def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return(_result(t, (a,), lambda g: (g * (1.0 - t * t),), 'tanh'))

def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    return(_result(e, (a,), lambda g: (g * e,), 'exp'))

def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    def backward_fn(g):
        return(s * (g - (g * s).sum(axis=axis, keepdims=True)),)
    return(_result(s, (a,), backward_fn, 'softmax'))

'''Backward pass
'''
def _topological_order(root):
    # iterative DFS: recurrent unrolls make graphs deeper than the recursion limit
    order, visited = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack_.append((parent, False))
    return(order)

def backward(loss, retain_graph=False):
    '''Accumulate d(loss)/d(t) into t.grad for every requires_grad tensor reachable from loss
    '''
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError('backward needs a scalar loss, got shape %s' % (getattr(loss, 'shape', None),))
    if not loss.requires_grad:
        raise ContractError('loss was not produced by recorded operations')
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        parent_grads = node._backward(node.grad)
        for parent, g in zip(node._parents, parent_grads):
            if not parent.requires_grad:
                continue
            parent.grad = np.array(g, dtype=np.float64) if parent.grad is None else parent.grad + g
    if not retain_graph:
        for node in order:
            node._parents = ()
            node._backward = None

'''Finite differences
'''
def numerical_gradient(value_fn, tensor, eps=1e-5, coords=None, kink_tol=None):
    '''Central differences of the scalar value_fn() w.r.t. tensor.data at [coords] (flat indices)
    - kink_tol: when set, a coordinate whose one-sided slopes differ by more than
      kink_tol * max(1, |slope|) straddles a kink within eps and maps to None
    '''
    flat = tensor.data.reshape(-1)
    if not np.shares_memory(flat, tensor.data):
        raise ContractError('numerical_gradient needs a contiguous tensor')
    coords = range(flat.size) if coords is None else coords
    f_zero = value_fn() if kink_tol is not None else None
    grad = {}
    for idx in coords:
        orig = flat[idx]
        flat[idx] = orig + eps
        f_plus = value_fn()
        flat[idx] = orig - eps
        f_minus = value_fn()
        flat[idx] = orig
        grad[int(idx)] = (f_plus - f_minus) / (2.0 * eps)
        if kink_tol is not None:
            right, left = (f_plus - f_zero) / eps, (f_zero - f_minus) / eps
            if abs(right - left) > kink_tol * max(1.0, abs(right), abs(left)):
                grad[int(idx)] = None
    return(grad)

def relative_error(analytic, numeric, floor=1e-6):
    analytic, numeric = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return(float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0)

def gradient_check(loss_fn, tensors, eps=1e-5, max_coords=None, rng=None, floor=1e-4, kink_tol=None):
    '''Compare backward() gradients with central finite differences.
    - loss_fn   : builds a scalar Tensor from [tensors] (must be deterministic)
    - tensors   : leaf Tensors with requires_grad=True
    - max_coords: check at most this many random coordinates per tensor
    - floor     : smallest magnitude used as the denominator of the relative error
    - kink_tol  : skip coordinates that straddle a kink (see numerical_gradient)
    Return the maximum relative error.
    '''
    for t in tensors:
        t.grad = None
    backward(loss_fn())
    analytic = [t.grad.reshape(-1).copy() if t.grad is not None else np.zeros(t.size) for t in tensors]

    def value():
        with no_grad():
            return(float(loss_fn().data))

    worst = 0.0
    for t, grad in zip(tensors, analytic):
        coords = np.arange(t.size)
        if max_coords is not None and t.size > max_coords:
            rng = rng if rng is not None else np.random.default_rng(0)
            coords = np.sort(rng.choice(t.size, size=max_coords, replace=False))
        numeric = numerical_gradient(value, t, eps=eps, coords=coords, kink_tol=kink_tol)
        smooth = [int(i) for i in coords if numeric[int(i)] is not None]
        worst = max(worst, relative_error(grad[smooth], [numeric[i] for i in smooth], floor))
    return(worst)
