"""Dual replay memory: a large time-ordered main memory feeding a small
prioritized cache, with PER sampling and PSMM eviction, plus a small DQN
harness for comparing it against single-buffer baselines."""
from ._kernels import BACKEND
from .agent import AgentConfig, DQNAgent, QNetwork, act_epsilon_greedy, td_errors
from .dual_memory import (
    DualMemory,
    Handles,
    MemoryPolicy,
    Mode,
    RefreshReport,
    SinglePERMemory,
    SinglePSMMMemory,
    StaleHandleError,
    make_memory,
)
from .envs import CartPole, EnvSpec, GridWorld, make_env
from .harness import ExperimentConfig, bench_memory_ops, compare, evaluate, preset, run_experiment
from .priority import PriorityParams, SumTree, per_sample, priority_from_td, psmm_select_removals
from .replay_core import (
    Batch,
    InsufficientDataError,
    MainMemory,
    Transition,
    sample_time_stratified,
    stratified_indices,
    subset_bounds,
)

__version__ = "0.1.0"
