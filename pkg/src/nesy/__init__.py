"""Neurosymbolic learning toolkit: a probabilistic Datalog engine with
differentiable provenance, a small numpy network stack, and constraint
losses, plus benchmark tasks."""

__version__ = "0.1.0"
