"""Prometheus metrics for ingestion, training, serving and evaluation."""
