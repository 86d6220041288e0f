import unittest

from test_utils_tensor import *
from test_utils_nets import *
from test_utils_envs import *
from test_utils_vsp import *
from test_utils_mixers import *
from test_utils_oracle import *
from test_utils_replay import *
from test_config_loader import *
from test_logger import *
from test_learner import *
from test_cli import *

unittest.main()
