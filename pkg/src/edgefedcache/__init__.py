"""Personalized federated deep Q-learning for edge content caching."""
from .agent import AgentConfig, MHDQNAgent, run_episode, select_action
from .baselines import LFUPolicy, LRUPolicy, RandomPolicy, run_baseline_episode
from .config import ExperimentConfig
from .env import CacheEnv, CacheState, RewardWeights, env_step, ewma_observation, project_feasible
from .federation import Federation, FederationMode, LayerSplit, aggregate_base, broadcast_sync
from .harness import run_experiment, run_sweep
from .neural import QNetwork, grad_check, soft_update
from .workload import ContentCatalog, ServerProfile, generate_requests, mzipf_pmf

__version__ = "0.1.0"
