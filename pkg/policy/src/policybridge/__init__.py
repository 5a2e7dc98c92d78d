"""Bridge policy: attention/pointer network plus PPO, driving the episode
engine over length-delimited JSON frames."""

from .net import AttentionLayer, PolicyNet, laplacian_positional_encoding
from .ppo import PpoConfig, PpoTrainer, load_checkpoint, run_random_policy, save_checkpoint
from .protocol import PolicyEndpoint, ProtocolError, validate_message

__all__ = [
    "AttentionLayer", "PolicyNet", "laplacian_positional_encoding",
    "PpoConfig", "PpoTrainer", "load_checkpoint", "run_random_policy", "save_checkpoint",
    "PolicyEndpoint", "ProtocolError", "validate_message",
]

__version__ = "0.1.0"
