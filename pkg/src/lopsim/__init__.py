"""Simulator for wire-assisted local operations: channels, protocol trees, standard
protocols, coherence monotones and distillation."""

__version__ = "0.1.0"
