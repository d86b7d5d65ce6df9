"""Joint trajectory prediction for interacting vehicle pairs: vectorized
scene encoding, conditional goal prediction, synchronized goal-oriented
rollout, training, and a joint-prediction metric suite."""

__version__ = "0.1.0"
