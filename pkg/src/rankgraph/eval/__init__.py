"""Evaluation: synthetic planted-partition data, interaction logs and the two recall protocols."""
