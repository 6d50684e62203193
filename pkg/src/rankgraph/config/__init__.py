"""Configuration utilities and models for rankgraph.

Exposes `load_config`, `derive_seed` and the pydantic section models used to
validate run configuration.
"""
