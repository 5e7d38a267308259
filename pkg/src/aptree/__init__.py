"""Seq2tree code generation with antecedent-prioritized loss weighting."""

__version__ = "0.1.0"
