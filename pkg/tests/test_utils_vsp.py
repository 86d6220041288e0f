import unittest
from unittest import mock
import numpy as np

from asynccredit.utils.envs import AsyncMatrixGame, AsyncGridworld, STAY, UP, DOWN
from asynccredit.utils.vsp import (VspEnv, PaddedEnv, DiscardEnv, PassthroughEnv, wrap_env, wrap_padding,
                                   check_pair_coherence, collect_discarding, DECIDING, EXECUTING, MASKED,
                                   MASKED_ACTION, PROXY)
from asynccredit.verify import check_vsp_pair_coherence, check_reward_transparency, check_synchronous_degeneration
from asynccredit.exceptions import ContractError, ConfigError

from utils import compare_numpy_array

def gridworld(durations=(1, 2, 3), episode_limit=20):
    return(AsyncGridworld(grid_size=3, durations=list(durations), episode_limit=episode_limit, seed=0))

class TestVspUtils(unittest.TestCase):
    '''Tests the proxy slots of the VSP wrapper
    '''
    def test_reset_all_proxies_masked(self):
        wrapper = VspEnv(gridworld())
        ext, slots = wrapper.reset(0)
        self.assertEqual(len(slots), 6)
        self.assertEqual([s.phase for s in slots], [DECIDING] * 3 + [MASKED] * 3)
        self.assertEqual([s.paired_real for s in slots if s.kind == PROXY], [0, 1, 2])
        self.assertEqual(wrapper.action_mask(), [set(range(5))] * 3 + [set()] * 3)
        self.assertEqual(ext.executing(), [])
        self.assertEqual(ext.vector().shape, (wrapper.extended_state_dim,))

    def test_proxy_replays_running_action(self):
        wrapper = VspEnv(gridworld())
        wrapper.reset(0)
        before = wrapper.slot_observations()[2].copy()
        ext, _, _ = wrapper.step({0: STAY, 1: STAY, 2: UP})
        self.assertEqual(wrapper.phases(), [DECIDING, DECIDING, EXECUTING, MASKED, MASKED, EXECUTING])
        mask = wrapper.action_mask()
        self.assertEqual(mask[2], {wrapper.blank})
        self.assertEqual(mask[5], {UP})
        # the proxy sees the observation its agent committed with
        self.assertTrue(compare_numpy_array(wrapper.slot_observations()[5], before))
        self.assertEqual(ext.executing(), [2])
        self.assertEqual(check_pair_coherence(wrapper), [])

    def test_proxy_masked_when_action_completes(self):
        wrapper = VspEnv(gridworld())
        wrapper.reset(0)
        wrapper.step({0: STAY, 1: STAY, 2: UP})
        wrapper.step({0: STAY, 1: STAY})
        self.assertEqual(wrapper.phases()[5], EXECUTING)
        wrapper.step({0: STAY, 1: STAY})
        self.assertEqual(wrapper.phases()[2], DECIDING)
        self.assertEqual(wrapper.phases()[5], MASKED)

    def test_decision_for_non_deciding_slot(self):
        wrapper = VspEnv(gridworld())
        wrapper.reset(0)
        wrapper.step({0: STAY, 1: STAY, 2: UP})
        with self.assertRaises(ContractError):
            wrapper.step({0: STAY, 1: STAY, 2: UP})
        with self.assertRaises(ContractError):
            wrapper.step({0: STAY, 1: STAY, 5: UP})

    def test_missing_decision(self):
        wrapper = VspEnv(gridworld())
        wrapper.reset(0)
        with self.assertRaises(ContractError):
            wrapper.step({0: STAY, 1: STAY})

    def test_unit_durations_never_unmask(self):
        self.assertTrue(check_synchronous_degeneration(3)['passed'])

    def test_pair_coherence_random_play(self):
        self.assertTrue(check_vsp_pair_coherence(5)['passed'])

    def test_pair_coherence_detects_decoupled_proxy(self):
        decoupled = lambda self, agent: (self.decision_actions[agent] + 1) % self.action_count
        with mock.patch.object(VspEnv, '_proxy_action', decoupled):
            result = check_vsp_pair_coherence(5)
        self.assertFalse(result['passed'])
        self.assertIsNotNone(result['first_violation'])

    def test_reward_transparency(self):
        result = check_reward_transparency(5)
        self.assertTrue(result['passed'])
        self.assertEqual(result['max_deviation'], 0.0)

    def test_tabular_joint_actions(self):
        wrapper = VspEnv(AsyncMatrixGame())
        wrapper.reset(0)
        self.assertEqual(len(wrapper.legal_joint_actions()), 4)
        wrapper.transition((1, 0, MASKED_ACTION, MASKED_ACTION))
        legal = wrapper.legal_joint_actions()
        # row executes its value-2 action, its proxy replays it, the column decides
        self.assertEqual(legal, [(2, 0, 1, MASKED_ACTION), (2, 1, 1, MASKED_ACTION)])
        with self.assertRaises(ContractError):
            wrapper.transition((2, 0, 0, MASKED_ACTION))

    def test_state_key_roundtrip(self):
        wrapper = VspEnv(gridworld())
        wrapper.reset(0)
        wrapper.step({0: STAY, 1: STAY, 2: DOWN})
        key = wrapper.get_state()
        other = VspEnv(gridworld())
        other.reset(0)
        other.set_state(key)
        self.assertEqual(other.phases(), wrapper.phases())
        self.assertTrue(compare_numpy_array(other.slot_observations(), wrapper.slot_observations()))

class TestPaddingUtils(unittest.TestCase):
    '''Tests the padding, discard and passthrough wrappers
    '''
    def mid_execution(self, wrapper):
        wrapper.reset(0)
        wrapper.step({0: STAY, 1: STAY, 2: UP})
        return(wrapper.action_mask())

    def test_pad_blank(self):
        wrapper = wrap_padding(gridworld(), 'blank')
        mask = self.mid_execution(wrapper)
        self.assertEqual(mask[2], {wrapper.blank})
        self.assertEqual(mask[3:], [set()] * 3)

    def test_pad_recent(self):
        wrapper = wrap_padding(gridworld(), 'recent')
        mask = self.mid_execution(wrapper)
        self.assertEqual(mask[2], {UP})
        self.assertEqual(wrapper.phases()[2], EXECUTING)

    def test_discard(self):
        wrapper = DiscardEnv(gridworld())
        self.mid_execution(wrapper)
        self.assertEqual(wrapper.phases(), [DECIDING, DECIDING, MASKED, MASKED, MASKED, MASKED])

    def test_passthrough_asks_everyone(self):
        wrapper = PassthroughEnv(gridworld())
        self.mid_execution(wrapper)
        self.assertEqual(wrapper.phases()[:3], [DECIDING] * 3)
        wrapper.step({0: STAY, 1: STAY, 2: DOWN})
        self.assertEqual(wrapper.env.running[2], UP)

    def test_wrap_env(self):
        self.assertIsInstance(wrap_env(gridworld(), 'vsp'), VspEnv)
        self.assertEqual(wrap_env(gridworld(), 'pad_recent').mode, 'pad_recent')
        self.assertIsInstance(wrap_env(gridworld(), 'discard'), DiscardEnv)
        self.assertIsInstance(wrap_env(gridworld(), 'none'), PassthroughEnv)
        with self.assertRaises(ConfigError):
            wrap_env(gridworld(), 'pad_sideways')
        with self.assertRaises(ConfigError):
            PaddedEnv(gridworld(), 'sideways')

class TestDiscardingCollector(unittest.TestCase):
    '''Tests macro-transition collection with discounted in-action rewards
    '''
    def test_three_step_action_reward(self):
        env = gridworld(durations=(3, 3, 3), episode_limit=3)
        streams = collect_discarding(env, lambda agent, obs: UP, gamma=0.99)
        for stream in streams:
            self.assertEqual(len(stream), 1)
            transition = stream[0]
            self.assertEqual(transition.duration, 3)
            self.assertEqual(transition.action, UP)
            self.assertAlmostEqual(transition.reward, -0.1 * (1 + 0.99 + 0.99 ** 2))

    def test_unit_durations_match_synchronous_steps(self):
        env = gridworld(durations=(1, 1, 1), episode_limit=4)
        streams = collect_discarding(env, [lambda obs: STAY] * 3, gamma=0.9)
        for stream in streams:
            self.assertEqual(len(stream), 4)
            self.assertTrue(all(t.duration == 1 and abs(t.reward + 0.1) < 1e-12 for t in stream))
            self.assertEqual([t.terminated for t in stream], [False, False, False, True])
