"""Context-aware multi-agent deep Q-learning for EV-charging coordination."""

__version__ = "0.1.0"
