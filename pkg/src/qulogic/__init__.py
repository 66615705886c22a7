"""Simulation of a quantum-secured ledger: phase-gate qubits, Toeplitz MACs,
correlated-list Byzantine agreement, protected transactions and a
cheat-sensitive bit commitment with ledger-enforced punishment."""

__version__ = "0.1.0"
