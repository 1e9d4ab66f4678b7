"""Deterministic testbed for decentralized microservice governance.

Agents (one per service) act on local observations enriched by a graph
embedding, learn with centralized critics, and their strategy portfolios
evolve under replicator dynamics.
"""

__version__ = "0.1.0"
