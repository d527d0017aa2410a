"""Exact sigma-stability analysis of PI control over a delayed channel."""
from .errors import *  # noqa: F401,F403
from .model import (FIXED_D, NONE, ZETA, ChannelParams, Gains, LoopConfig, PlantParams,
                    ScatteringConfig)
from .quasipoly import (Quasipolynomial, RootWindow, build_characteristic, characteristic,
                        count_roots_right_of, default_window, evaluate, locate_roots,
                        rightmost_root)

__version__ = "0.1.0"
