__version__ = '0.1.0'

from .config_loader import load_config
from .learner import Learner
from .main import Experiment
from . import utils
