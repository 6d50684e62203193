"""Numeric core: immutable tensors, a recording tape, primitive ops and reverse-mode gradients."""
