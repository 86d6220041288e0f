# load configurations from config.yaml
import yaml
import json
import copy
from os.path import dirname, abspath, join, isfile
import sys

from .exceptions import ConfigError

yaml_file = join(dirname(abspath(__file__)), 'config.yaml')

class Struct:
    def __init__(self, **entries):
        self.__dict__.update(entries)

    def as_dict(self):
        return(copy.deepcopy(self.__dict__))

with open(yaml_file, 'r') as stream:
    try:
        defaults = yaml.safe_load(stream)
    except yaml.YAMLError as err:
        print(err, file = sys.stderr)

def update_config(cfg, attribute, **args):
    '''Update section [attribute] of cfg in place; unknown sections or keys raise ConfigError
    '''
    if not hasattr(cfg, attribute):
        raise ConfigError('%s is not a config section' % attribute)
    vals = getattr(cfg, attribute)
    for key in args:
        if key not in vals:
            raise ConfigError('%s not found in config.%s' % (key, attribute))
        vals[key] = args[key]
    setattr(cfg, attribute, vals)

def parse_override(text):
    '''Split "section.key=value" into (section, key, value); the value is typed by YAML
    '''
    if '=' not in text:
        raise ConfigError('override %s is not of the form section.key=value' % text)
    dotted, raw = text.split('=', 1)
    dotted = dotted.lstrip('-')
    if dotted.count('.') != 1:
        raise ConfigError('config key %s should be section.key' % dotted)
    section, key = dotted.split('.')
    try:
        value = yaml.safe_load(raw) if raw != '' else None
    except yaml.YAMLError:
        value = raw
    return(section, key, value)

def _read_run_file(path):
    if not isfile(path):
        raise ConfigError('config file not found: %s' % path)
    with open(path, 'r') as stream:
        if path.endswith('.json'):
            content = json.load(stream)
        else:
            content = yaml.safe_load(stream)
    if content is None:
        return({})
    if not isinstance(content, dict):
        raise ConfigError('config file %s should hold a mapping' % path)
    # a run manifest carries the resolved configuration under 'config'
    if 'config' in content and isinstance(content['config'], dict):
        content = content['config']
    return(content)

def _flatten(content):
    '''Both nested sections and flat dotted keys are accepted in run files
    '''
    items = []
    for key, value in content.items():
        if isinstance(value, dict) and '.' not in key:
            for sub_key, sub_value in value.items():
                items.append((key, sub_key, sub_value))
        elif '.' in key and key.count('.') == 1:
            section, sub_key = key.split('.')
            items.append((section, sub_key, value))
        else:
            raise ConfigError('config key %s should be section.key' % key)
    return(items)

def load_config(path=None, overrides=None, base=None):
    '''Return a fresh configuration:
    - defaults from config.yaml, or the nested dict [base] (e.g. a checkpoint's config)
    - updated by the run file at [path] (YAML, or a manifest.json of an earlier run)
    - updated by [overrides]: a list of "section.key=value" strings or (section, key, value) tuples
    '''
    cfg = config_from_dict(base) if base is not None else Struct(**copy.deepcopy(defaults))
    if path is not None:
        for section, key, value in _flatten(_read_run_file(path)):
            update_config(cfg, section, **{key: value})
    for item in (overrides or []):
        section, key, value = parse_override(item) if isinstance(item, str) else item
        update_config(cfg, section, **{key: value})
    return(cfg)

def config_from_dict(content):
    '''Fresh configuration from a nested dict (e.g. the config stored in a checkpoint or manifest)'''
    cfg = Struct(**copy.deepcopy(defaults))
    for section, key, value in _flatten(content):
        update_config(cfg, section, **{key: value})
    return(cfg)

# expected value types per section; optional keys also accept None
INT_KEYS = {
    'env': ['n_items'],
    'agent': ['hidden_dim'],
    'mixer': ['order', 'heads', 'hypernet_hidden', 'embed_dim', 'mlp_hidden'],
    'train': ['batch_size', 'buffer_size', 'eps_anneal_steps', 'target_update_interval', 'test_interval',
              'test_episodes', 'total_timesteps', 'seed', 'num_workers'],
    'oracle': ['max_states', 'max_joint_actions', 'iteration_cap', 'policies', 'gridworld_max_states',
               'gridworld_episode_limit'],
}
OPTIONAL_INT_KEYS = {
    'env': ['seed', 'grid_size', 'episode_limit'],
    'train': ['save_interval'],
}
FLOAT_KEYS = {
    'train': ['gamma', 'eps_start', 'eps_finish', 'learning_rate', 'adam_eps'],
    'oracle': ['tolerance'],
}
OPTIONAL_FLOAT_KEYS = {
    'train': ['grad_norm_clip'],
}

def _as_int(section, key, value):
    if isinstance(value, bool):
        raise ConfigError('%s.%s should be an integer, got %s' % (section, key, value))
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigError('%s.%s should be an integer, got %s' % (section, key, value))
    if not number.is_integer():
        raise ConfigError('%s.%s should be an integer, got %s' % (section, key, value))
    return(int(number))

def _as_float(section, key, value):
    if isinstance(value, bool):
        raise ConfigError('%s.%s should be a number, got %s' % (section, key, value))
    try:
        return(float(value))
    except (TypeError, ValueError):
        raise ConfigError('%s.%s should be a number, got %s' % (section, key, value))

def coerce_types(cfg):
    '''Convert numeric entries in place; a value of the wrong type raises ConfigError naming the key
    '''
    tables = [(INT_KEYS, _as_int, False), (OPTIONAL_INT_KEYS, _as_int, True),
              (FLOAT_KEYS, _as_float, False), (OPTIONAL_FLOAT_KEYS, _as_float, True)]
    for table, convert, optional in tables:
        for section, keys in table.items():
            vals = getattr(cfg, section)
            for key in keys:
                if optional and vals[key] is None:
                    continue
                vals[key] = convert(section, key, vals[key])
    return(cfg)

def validate_config(cfg):
    '''Check types and the value ranges the training loop relies on; raise ConfigError naming the key
    '''
    coerce_types(cfg)
    train = cfg.train
    if not 0 <= train['eps_finish'] <= train['eps_start'] <= 1:
        raise ConfigError('train.eps_finish / train.eps_start should satisfy 0 <= finish <= start <= 1')
    if not 0 <= train['gamma'] < 1:
        raise ConfigError('train.gamma should lie in [0, 1)')
    for key in ['batch_size', 'buffer_size', 'target_update_interval', 'test_interval', 'test_episodes',
                'total_timesteps', 'num_workers']:
        if train[key] < 1:
            raise ConfigError('train.%s should be a positive integer' % key)
    if train['batch_size'] > train['buffer_size']:
        raise ConfigError('train.batch_size should not exceed train.buffer_size')
    if cfg.mixer['head_mode'] not in ('direct', 'softmax', 'mlp'):
        raise ConfigError('mixer.head_mode should be direct, softmax or mlp')
    if cfg.mixer['family'] not in ('additive', 'monotonic', 'mvd'):
        raise ConfigError('mixer.family should be additive, monotonic or mvd')
    if cfg.wrapper['mode'] not in ('vsp', 'pad_blank', 'pad_recent', 'discard', 'none'):
        raise ConfigError('wrapper.mode should be vsp, pad_blank, pad_recent, discard or none')
    return(cfg)
