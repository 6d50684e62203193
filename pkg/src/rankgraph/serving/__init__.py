"""Serving reads: embedding tables, kNN, clustering, subgraph projection and token export."""
