"""byzwire: Byzantine-resilient ad-hoc wireless protocol suite.

A deterministic discrete-event simulator and protocol library: neighbor and
network discovery over an orthogonal MAC schedule, cycle-based clock
consistency checking, EIG dissemination, LP-based slot scheduling with
verification-driven pruning, adversary strategies, and a brute-force min-max
oracle.
"""

__version__ = "0.1.0"
