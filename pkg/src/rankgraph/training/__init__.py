"""Contrastive training: negative sources, losses, Adam and the step loop."""
