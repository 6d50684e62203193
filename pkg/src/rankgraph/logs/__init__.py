"""Structured JSON-line logging and append-only run journals."""
