"""Deterministic binary containers shared by graph, checkpoint and table files."""
