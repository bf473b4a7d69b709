"""Deterministic federated-learning simulator at desk scale.

Pure-numpy MLP training under FedAvg / FedProx / FedNTD style local
objectives, non-IID partitioning, forgetting and drift metrics, and a
standalone numerical verification suite for the underlying identities.
"""

__version__ = "0.1.0"
