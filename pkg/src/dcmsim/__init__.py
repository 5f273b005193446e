"""Neural speaker/listener agents that learn miniature case-marking languages
and then reshape them through a meaning-reconstruction game."""

from .agents import Agent, ModelConfig, listen, predict_meaning, speak
from .experiment import ExperimentConfig, run_experiment
from .language import PRESETS, Condition, Inventory, LanguageSpec, Meaning
from .training import RlConfig, SlConfig

__all__ = [
    "Agent", "ModelConfig", "listen", "predict_meaning", "speak",
    "ExperimentConfig", "run_experiment",
    "PRESETS", "Condition", "Inventory", "LanguageSpec", "Meaning",
    "RlConfig", "SlConfig",
]
__version__ = "0.1.0"
