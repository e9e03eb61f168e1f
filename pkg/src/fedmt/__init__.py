"""Desk-scale federated multilingual translation simulator.

Clients hold one synthetic language pair each and train bottleneck adapter
modules on a shared frozen backbone. A server aggregates adapter parameters
within client clusters (language family, gradient similarity, or random),
and a communication ledger accounts for every byte that would cross the
wire under a bandwidth model.
"""

__version__ = "0.1.0"
