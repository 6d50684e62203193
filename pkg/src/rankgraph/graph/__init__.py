"""Heterogeneous graph store: schemas, ingestion, adjacency reads, semantic
edges, feature blocks and training-pair sampling."""
