"""Run orchestration: config, dataset persistence, training, evaluation."""

from .config import RunConfig, config_hash, default_config, load_config, parse_config
from .dataset import Episode, read_episode, write_episode

__all__ = [
    "RunConfig",
    "default_config",
    "parse_config",
    "load_config",
    "config_hash",
    "Episode",
    "write_episode",
    "read_episode",
]
