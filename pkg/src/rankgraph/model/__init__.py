"""RankGraph network: parameters, checkpoints and the forward pass."""
