"""fedattr: a deterministic desk-scale federated-learning simulator for
studying client-level attribution manipulation under utility constraints."""

__version__ = "0.1.0"
