"""Group-balanced angular-margin embedding training.

A micro embedding trainer whose per-group angular margins are steered by
a Q-learning controller so that intra/inter-class geometry stays balanced
across demographic groups.
"""

__version__ = "0.1.0"
