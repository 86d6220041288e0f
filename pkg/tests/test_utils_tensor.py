import unittest
import threading
import numpy as np

from asynccredit.utils.tensor import (Tensor, backward, no_grad, is_grad_enabled, gather, concat, stack, masked,
                                      softmax, elu, relu, gradient_check, numerical_gradient, relative_error)
from asynccredit.exceptions import ContractError, DimensionError

from utils import compare_numpy_array

class TestTensorUtils(unittest.TestCase):
    '''Tests the autodiff core: recorded operations, backward and finite differences
    '''
    def test_backward_sum(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        x.sum().backward()
        self.assertTrue(compare_numpy_array(x.grad, np.ones(3)))

    def test_backward_chain_rule(self):
        # loss = (w * x - y)^2 at w=1, x=2, y=0 -> d/dw = 2 (w x - y) x = 8
        w = Tensor(1.0, requires_grad=True)
        loss = (w * 2.0 - 0.0) ** 2
        loss.backward()
        self.assertAlmostEqual(float(w.grad), 8.0)

    def test_backward_non_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with self.assertRaises(ContractError):
            backward(x * 2.0)

    def test_backward_without_graph(self):
        with self.assertRaises(ContractError):
            backward(Tensor(1.0))

    def test_backward_accumulates_shared_use(self):
        x = Tensor(3.0, requires_grad=True)
        (x * x + x).backward()
        self.assertAlmostEqual(float(x.grad), 7.0)

    def test_broadcast_gradients(self):
        a = Tensor(np.ones((4, 3)), requires_grad=True)
        b = Tensor(np.arange(3.0), requires_grad=True)
        (a * b).sum().backward()
        self.assertTrue(compare_numpy_array(b.grad, np.full(3, 4.0)))
        self.assertTrue(compare_numpy_array(a.grad, np.tile(np.arange(3.0), (4, 1))))

    def test_matmul_dimension_error(self):
        with self.assertRaises(DimensionError):
            Tensor(np.ones(3)) @ Tensor(np.ones((3, 2)))

    def test_no_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with no_grad():
            self.assertFalse(is_grad_enabled())
            y = x * 2.0
        self.assertTrue(is_grad_enabled())
        self.assertFalse(y.requires_grad)

    def test_no_grad_is_thread_local(self):
        seen = []
        with no_grad():
            worker = threading.Thread(target=lambda: seen.append(is_grad_enabled()))
            worker.start()
            worker.join()
        self.assertEqual(seen, [True])

    def test_gather_gradient(self):
        q = Tensor(np.arange(12.0).reshape(2, 2, 3), requires_grad=True)
        picked = gather(q, np.array([[0, 2], [1, 1]]))
        self.assertTrue(compare_numpy_array(picked.data, np.array([[0.0, 5.0], [7.0, 10.0]])))
        picked.sum().backward()
        expected = np.zeros((2, 2, 3))
        expected[0, 0, 0] = expected[0, 1, 2] = expected[1, 0, 1] = expected[1, 1, 1] = 1.0
        self.assertTrue(compare_numpy_array(q.grad, expected))

    def test_masked_blocks_gradient(self):
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        y = masked(x, [True, False, True])
        self.assertTrue(compare_numpy_array(y.data, np.array([1.0, 0.0, 3.0])))
        (y * 5.0).sum().backward()
        self.assertTrue(compare_numpy_array(x.grad, np.array([5.0, 0.0, 5.0])))

    def test_getitem_repeated_index(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        x[np.array([1, 1, 3])].sum().backward()
        self.assertTrue(compare_numpy_array(x.grad, np.array([0.0, 2.0, 0.0, 1.0])))

    def test_getitem_slice(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        x[:, 1:].sum().backward()
        self.assertTrue(compare_numpy_array(x.grad, np.array([[0.0, 1.0, 1.0], [0.0, 1.0, 1.0]])))

    def test_softmax_rows_sum_to_one(self):
        s = softmax(Tensor(np.random.default_rng(0).normal(size=(5, 4))), axis=-1)
        self.assertTrue(compare_numpy_array(s.data.sum(axis=-1), np.ones(5)))

    def test_numerical_gradient_quadratic(self):
        x = Tensor([1.0, -2.0])
        grad = numerical_gradient(lambda: float((x.data ** 2).sum()), x)
        self.assertAlmostEqual(grad[0], 2.0, places=6)
        self.assertAlmostEqual(grad[1], -4.0, places=6)

    def test_relative_error_floor(self):
        self.assertEqual(relative_error([0.0], [0.0]), 0.0)
        self.assertAlmostEqual(relative_error([1e-9], [0.0], floor=1e-4), 1e-5)

    def test_gradient_check_skips_kinks(self):
        x = Tensor([1e-7, 1.0, -0.5], requires_grad=True)
        loss_fn = lambda: (relu(x) * Tensor([1.0, 2.0, 3.0])).sum()
        self.assertGreater(gradient_check(loss_fn, [x]), 0.1)
        self.assertLess(gradient_check(loss_fn, [x], kink_tol=1e-3), 1e-8)
        grad = numerical_gradient(lambda: float(np.maximum(x.data, 0.0).sum()), x, kink_tol=1e-3)
        self.assertIsNone(grad[0])
        self.assertAlmostEqual(grad[1], 1.0, places=6)

    def test_gradient_check_composite(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        c = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        def loss_fn():
            hidden = elu(a @ b).tanh() * c.sigmoid()
            return(concat([hidden, stack([c.exp().sum(axis=0), softmax(c, axis=0).sum(axis=0)])], axis=0).mean())
        self.assertLess(gradient_check(loss_fn, [a, b, c]), 1e-5)

'''Algebraic identities checked on many random draws
'''
def make_division_test(seed):
    def test(self):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.uniform(0.5, 2.0, size=5), requires_grad=True)
        y = Tensor(rng.uniform(0.5, 2.0, size=5), requires_grad=True)
        self.assertLess(gradient_check(lambda: (x / y - y / x).sum(), [x, y]), 1e-6)
    return(test)

for seed in range(5):
    setattr(TestTensorUtils, 'test_gradient_check_division_seed%d' % seed, make_division_test(seed))
