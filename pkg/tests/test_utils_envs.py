import unittest
import numpy as np

from asynccredit.utils.envs import (AsyncMatrixGame, AsyncGridworld, make_env, STAY, UP, DOWN, LEFT,
                                    DELIVERED)
from asynccredit.exceptions import ContractError, ConfigError

from utils import compare_numpy_array

class TestMatrixGame(unittest.TestCase):
    '''Tests the two-player asynchronous matrix game
    '''
    def setUp(self):
        self.env = AsyncMatrixGame()

    def play(self, row_action, column_action):
        self.env.reset(0)
        first = self.env.step([row_action, 0])
        self.assertFalse(first.terminated)
        self.assertEqual(first.decision_mask, [False, True])
        return(self.env.step([self.env.blank, column_action]))

    def test_reset_start_token(self):
        result = self.env.reset(0)
        self.assertTrue(compare_numpy_array(result.observations[:, 0], np.ones(2)))
        self.assertEqual(result.decision_mask, [True, True])

    def test_reset_deterministic(self):
        first = self.env.reset(3).observations
        second = self.env.reset(3).observations
        self.assertTrue(compare_numpy_array(first, second))

    def test_best_payoff(self):
        result = self.play(1, 1)
        self.assertTrue(result.terminated)
        self.assertEqual(result.reward, 4.0)
        self.assertTrue(self.env.is_success())

    def test_worst_payoff(self):
        result = self.play(0, 0)
        self.assertEqual(result.reward, 1.0)
        self.assertFalse(self.env.is_success())

    def test_column_sees_running_row_action(self):
        self.env.reset(0)
        result = self.env.step([1, 0])
        self.assertTrue(compare_numpy_array(result.observations[1, 1:3], np.array([0.0, 1.0])))

    def test_payoff_table(self):
        self.assertTrue(compare_numpy_array(self.env.payoff_table(), np.array([[1.0, 2.0], [2.0, 4.0]])))

    def test_action_out_of_range(self):
        self.env.reset(0)
        with self.assertRaises(ContractError):
            self.env.step([3, 0])

    def test_blank_for_deciding_agent(self):
        self.env.reset(0)
        with self.assertRaises(ContractError):
            self.env.step([self.env.blank, 0])

    def test_step_after_termination(self):
        self.play(1, 1)
        with self.assertRaises(ContractError):
            self.env.step([0, 0])

    def test_state_roundtrip(self):
        self.env.reset(0)
        self.env.step([1, 0])
        key = self.env.get_state()
        clone = AsyncMatrixGame()
        clone.set_state(key)
        self.assertEqual(clone.get_state(), key)
        self.assertTrue(compare_numpy_array(clone.observations(), self.env.observations()))

class TestGridworld(unittest.TestCase):
    '''Tests the item-delivery gridworld
    '''
    def test_layout_reproducible(self):
        first = AsyncGridworld(seed=0).layout()
        second = AsyncGridworld(seed=0).layout()
        self.assertEqual(first, second)
        cells = [first['goal']] + list(first['items']) + list(first['starts'])
        self.assertEqual(len(set(cells)), len(cells))

    def test_durations_drawn_in_range(self):
        durations = AsyncGridworld(seed=4).layout()['durations']
        self.assertEqual(len(durations), 3)
        self.assertTrue(all(1 <= d <= 3 for d in durations))

    def test_dimensions(self):
        env = AsyncGridworld(grid_size=3, seed=0)
        result = env.reset(0)
        self.assertEqual(result.observations.shape, (3, env.obs_dim))
        self.assertEqual(result.next_state.shape, (env.state_dim,))

    def test_duration_bookkeeping(self):
        env = AsyncGridworld(durations=[1, 2, 3], seed=0)
        env.reset(0)
        masks = []
        joint = [STAY, STAY, UP]
        for _ in range(3):
            masks.append(env.step(joint).decision_mask[2])
            joint = [STAY, STAY, env.blank]
        self.assertEqual(masks, [False, False, True])

    def test_busy_agent_ignores_input(self):
        env = AsyncGridworld(durations=[1, 1, 3], seed=0)
        env.reset(0)
        env.step([STAY, STAY, DOWN])
        self.assertEqual(env.running[2], DOWN)
        env.step([STAY, STAY, LEFT])
        self.assertEqual(env.running[2], DOWN)

    def test_step_penalty(self):
        env = AsyncGridworld(seed=0)
        env.reset(0)
        self.assertAlmostEqual(env.step([STAY, STAY, STAY]).reward, -0.1)

    def test_delivery(self):
        env = AsyncGridworld(durations=[1, 1, 1], n_items=1, seed=0)
        env.reset(0)
        goal = env.goal
        # agent 0 carries the item onto the goal where agent 1 already waits
        env.set_state((0, (0, 0, 0), (env.blank,) * 3, False,
                       ((goal, goal, env.positions[2]), (0, -1, -1), (1,))))
        result = env.step([STAY, STAY, STAY])
        self.assertAlmostEqual(result.reward, 10.0 - 0.1)
        self.assertTrue(result.terminated)
        self.assertEqual(env.item_status, (DELIVERED,))
        self.assertTrue(env.is_success())

    def test_episode_limit(self):
        env = AsyncGridworld(episode_limit=2, seed=0)
        env.reset(0)
        self.assertFalse(env.step([STAY] * 3).terminated)
        self.assertTrue(env.step([STAY] * 3).terminated)

    def test_invalid_durations(self):
        with self.assertRaises(ConfigError):
            AsyncGridworld(durations=[1, 2])
        with self.assertRaises(ConfigError):
            AsyncGridworld(durations=[1, 0, 2])

    def test_moves_stay_on_grid(self):
        env = AsyncGridworld(durations=[1, 1, 1], seed=0)
        env.reset(0)
        for move in [UP, UP, UP, LEFT, LEFT, LEFT]:
            if env.step([move] * 3).terminated:
                break
        self.assertTrue(all(0 <= r < 3 and 0 <= c < 3 for r, c in env.positions))

class TestMakeEnv(unittest.TestCase):
    def test_names(self):
        self.assertIsInstance(make_env({'name': 'matrix', 'seed': 0}), AsyncMatrixGame)
        env = make_env({'name': 'gridworld_large', 'seed': 1, 'grid_size': None, 'durations': None,
                        'episode_limit': None, 'n_items': 2})
        self.assertEqual(env.grid_size, 5)

    def test_unknown(self):
        with self.assertRaises(ConfigError):
            make_env({'name': 'chess'})
