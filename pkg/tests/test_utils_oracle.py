import unittest
import numpy as np

from asynccredit.utils.envs import AsyncMatrixGame, AsyncGridworld
from asynccredit.utils.vsp import VspEnv
from asynccredit.utils.oracle import (TabularModel, enumerate_tabular, uniform_policy, random_policy, policy_eval,
                                      value_iteration, state_values, policy_value, monte_carlo_returns,
                                      vsp_equivalence_test, additive_fit, mvd_fit)
from asynccredit.exceptions import BudgetExceededError, ConvergenceError, ContractError

from utils import compare_numpy_array

def single_state_model(reward=1.0):
    return(TabularModel(['s'], [[(0,)]], [[[(1.0, 0)]]], [[reward]], [False]))

def chain_model(length, reward):
    '''length transitions through states 0..length, the last one paying [reward]'''
    states = list(range(length + 1))
    actions = [[(0,)] for _ in range(length)] + [[]]
    transitions = [[[(1.0, s + 1)]] for s in range(length)] + [[]]
    rewards = [[0.0] for _ in range(length - 1)] + [[reward]] + [[]]
    return(TabularModel(states, actions, transitions, rewards, [False] * length + [True]))

class TestTabularOracles(unittest.TestCase):
    '''Tests exhaustive enumeration, policy evaluation and value iteration
    '''
    def test_single_state_geometric_series(self):
        model = single_state_model()
        q = policy_eval(model, uniform_policy(model), 0.99)
        self.assertAlmostEqual(q[0], 100.0, places=8)

    def test_gamma_zero_is_reward(self):
        model = enumerate_tabular(AsyncMatrixGame())
        q = policy_eval(model, uniform_policy(model), 0.0)
        self.assertTrue(compare_numpy_array(q, model.rewards))

    def test_chain_root_value(self):
        model = chain_model(4, 3.0)
        q = value_iteration(model, 0.9)
        self.assertAlmostEqual(state_values(model, q)[0], 0.9 ** 3 * 3.0)

    def test_invalid_gamma(self):
        with self.assertRaises(ContractError):
            value_iteration(single_state_model(), 1.5)

    def test_iteration_cap(self):
        model = single_state_model()
        with self.assertRaises(ConvergenceError):
            policy_eval(model, uniform_policy(model), 0.99, iteration_cap=10)

    def test_matrix_game_enumeration(self):
        model = enumerate_tabular(AsyncMatrixGame())
        self.assertLessEqual(model.n_states, 10)
        self.assertTrue(compare_numpy_array(model.row_sums(), np.ones(model.n_sa)))
        self.assertEqual(len(model.state_actions(0)), 4)

    def test_matrix_game_optimum(self):
        model = enumerate_tabular(AsyncMatrixGame())
        q = value_iteration(model, 1.0)
        self.assertAlmostEqual(state_values(model, q)[0], 4.0)
        best = model.sa_action[int(np.argmax(q[model.state_actions(0)]))]
        self.assertEqual(best[0], 1)

    def test_gridworld_enumeration_stable(self):
        env = AsyncGridworld(grid_size=3, durations=[1, 2, 3], episode_limit=2, seed=0)
        first = enumerate_tabular(env.clone()).n_states
        second = enumerate_tabular(env.clone()).n_states
        self.assertEqual(first, second)
        self.assertGreater(first, 1)

    def test_model_replays_live_trajectories(self):
        rng = np.random.default_rng(2)
        envs = [AsyncMatrixGame(), VspEnv(AsyncMatrixGame()),
                AsyncGridworld(grid_size=3, durations=[1, 2, 3], episode_limit=2, seed=0)]
        for env in envs:
            model = enumerate_tabular(env.clone())
            for _ in range(20):
                live = env.clone()
                live.reset(0)
                state = 0
                self.assertEqual(model.states[state], live.get_state())
                while not live.is_terminal():
                    legal = live.legal_joint_actions()
                    joint = legal[rng.integers(len(legal))]
                    reward, _ = live.transition(joint)
                    model_reward, state = model.step(state, joint)
                    self.assertEqual(model_reward, reward)
                    self.assertEqual(model.states[state], live.get_state())
                    self.assertEqual(bool(model.terminal[state]), live.is_terminal())

    def test_budget(self):
        env = AsyncGridworld(grid_size=3, durations=[1, 2, 3], episode_limit=3, seed=0)
        with self.assertRaises(BudgetExceededError) as context:
            enumerate_tabular(env, max_states=20)
        self.assertGreater(context.exception.count, 20)

    def test_policy_value_matches_monte_carlo(self):
        model = enumerate_tabular(AsyncMatrixGame())
        rng = np.random.default_rng(0)
        policy = random_policy(model, rng)
        q = policy_eval(model, policy, 0.9)
        returns = monte_carlo_returns(model, policy, 0.9, 20000, rng)
        self.assertLess(abs(returns.mean() - policy_value(model, policy, q)), 0.05)

    def test_random_policy_is_distribution(self):
        model = enumerate_tabular(AsyncMatrixGame())
        policy = random_policy(model, np.random.default_rng(1))
        for s in range(model.n_states):
            if not model.terminal[s]:
                self.assertAlmostEqual(policy[model.state_actions(s)].sum(), 1.0)

class TestEquivalence(unittest.TestCase):
    '''Tests raw vs. proxy-wrapped value equivalence
    '''
    def test_matrix_game(self):
        report = vsp_equivalence_test(AsyncMatrixGame(), 0.99, n_policies=50)
        self.assertTrue(report['passed'], report['offending'])
        self.assertLess(report['max_deviation'], 1e-10)
        self.assertGreaterEqual(report['vsp_states'], report['raw_states'])

    def test_gridworld(self):
        env = AsyncGridworld(grid_size=3, durations=[1, 2, 3], episode_limit=3, seed=0)
        report = vsp_equivalence_test(env, 0.99, n_policies=10, max_states=50000)
        self.assertTrue(report['passed'], report['offending'])

    def test_unit_durations(self):
        env = AsyncGridworld(grid_size=3, durations=[1, 1, 1], episode_limit=2, seed=0)
        report = vsp_equivalence_test(env, 0.99, n_policies=5)
        self.assertTrue(report['passed'])
        self.assertEqual(report['raw_states'], report['vsp_states'])
        self.assertLess(report['max_deviation'], 1e-10)

    def test_wrapped_model_forces_proxy_entries(self):
        model = enumerate_tabular(VspEnv(AsyncMatrixGame()))
        proxy_entries = set(action[2] for action in model.sa_action)
        self.assertEqual(proxy_entries, {-1, 0, 1})

class TestFits(unittest.TestCase):
    '''Tests additive and multiplicative least-squares fits of payoff tables
    '''
    product = np.array([[1.0, 2.0], [2.0, 4.0]])

    def test_additive_table(self):
        table = np.add.outer([1.0, 2.0], [1.0, 2.0])
        self.assertLess(additive_fit(table).residual, 1e-20)
        self.assertLess(mvd_fit(table).residual, 1e-20)

    def test_product_table(self):
        # best additive fit misses each cell by 1/4
        self.assertAlmostEqual(additive_fit(self.product).residual, 0.25)
        fit = mvd_fit(self.product)
        self.assertLess(fit.residual, 1e-10)
        self.assertAlmostEqual(fit.k_pair[(0, 1)], 1.0)
        self.assertAlmostEqual(fit.k0, 0.0)
        self.assertTrue(np.allclose(fit.k, 0.0, atol=1e-9))

    def test_nested_classes(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            table = rng.normal(size=(3, 3))
            self.assertLessEqual(mvd_fit(table).residual, additive_fit(table).residual + 1e-12)
