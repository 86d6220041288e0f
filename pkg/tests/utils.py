import numpy as np

from asynccredit.config_loader import load_config

def compare_numpy_array(ar1, ar2):
    '''Compare and check if the values of two numpy arrays are equal
    '''
    all_float = False
    try:
        ar1 = ar1.astype(float)
        ar2 = ar2.astype(float)
        all_float = True
        np.testing.assert_allclose(ar1, ar2, verbose=True)
        return(True)
    except:
        if all_float: return(False)
        try:
            np.testing.assert_array_equal(ar1, ar2)
            return(True)
        except:
            return(False)

def small_config(**sections):
    '''Fresh config with small networks, quiet output, and per-section overrides:
    small_config(train={'batch_size': 4}, mixer={'family': 'additive'})
    '''
    cfg = load_config(overrides=[
        ('agent', 'hidden_dim', 16), ('mixer', 'hypernet_hidden', 8), ('mixer', 'embed_dim', 8),
        ('mixer', 'heads', 2), ('mixer', 'mlp_hidden', 4),
        ('train', 'batch_size', 4), ('train', 'buffer_size', 50), ('train', 'test_episodes', 2),
        ('output', 'verbose', False), ('output', 'no_progress', True)])
    for section, values in sections.items():
        for key, value in values.items():
            getattr(cfg, section)[key] = value
    return(cfg)
