'''Episodic replay: whole episodes are stored and sampled, then padded to the batch's longest one.
'''

from collections import deque

import numpy as np

from .vsp import MASKED
from ..exceptions import ContractError

# per-step fields carry T+1 rows (the last is the state after the final step); transition fields carry T
STEP_FIELDS = ('obs', 'avail', 'actions', 'phases', 'state', 'ext_state')
TRANSITION_FIELDS = ('reward', 'terminated')

class Episode(object):
    '''One rollout as numpy arrays; optional 'q_chosen' holds the utilities seen at collection time
    '''
    def __init__(self, **fields):
        self.fields = fields
        self.length = int(fields['reward'].shape[0])

    def __getitem__(self, name):
        return(self.fields[name])

    @property
    def episode_return(self):
        return(float(self.fields['reward'].sum()))

class EpisodeBatch(object):
    '''Episodes padded to the longest length T in the batch.
    obs (B, T+1, 2n, obs_dim), avail (B, T+1, 2n, A+1), actions / phases (B, T+1, 2n),
    state (B, T+1, state_dim), ext_state (B, T+1, ext_dim), reward / terminated / filled (B, T)
    Padded steps are MASKED in every slot with filled = 0.
    '''
    def __init__(self, episodes):
        if not episodes:
            raise ContractError('cannot build a batch from zero episodes')
        self.batch_size = len(episodes)
        self.max_len = max(e.length for e in episodes)
        self.lengths = np.array([e.length for e in episodes])
        T = self.max_len
        self.data = {}
        for name in STEP_FIELDS + TRANSITION_FIELDS:
            first = episodes[0][name]
            rows = T + 1 if name in STEP_FIELDS else T
            fill = MASKED if name == 'phases' else 0
            array = np.full((self.batch_size, rows) + first.shape[1:], fill, dtype=first.dtype)
            for b, episode in enumerate(episodes):
                array[b, :episode[name].shape[0]] = episode[name]
            self.data[name] = array
        self.data['filled'] = (np.arange(T)[None, :] < self.lengths[:, None]).astype(float)

    def __getitem__(self, name):
        return(self.data[name])

    def validate(self):
        '''Stored actions of unmasked slots were allowed at their step'''
        actions, avail, phases = self.data['actions'], self.data['avail'], self.data['phases']
        live = (phases[:, :-1] != MASKED) & (self.data['filled'][:, :, None] > 0)
        chosen = np.take_along_axis(avail[:, :-1], actions[:, :-1, :, None], axis=-1)[..., 0]
        return(bool(np.all(chosen[live])))

class ReplayBuffer(object):
    '''FIFO ring of episodes
    '''
    def __init__(self, capacity):
        self.capacity = int(capacity)
        self.memory = deque(maxlen=self.capacity)

    def insert(self, episode):
        self.memory.append(episode)

    def can_sample(self, batch_size):
        return(len(self.memory) >= batch_size)

    def sample(self, batch_size, rng):
        if not self.can_sample(batch_size):
            raise ContractError('buffer holds %d episodes, %d requested' % (len(self.memory), batch_size))
        picks = rng.choice(len(self.memory), size=batch_size, replace=False)
        return(EpisodeBatch([self.memory[i] for i in picks]))

    def __len__(self):
        return(len(self.memory))
