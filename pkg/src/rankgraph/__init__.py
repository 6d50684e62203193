"""rankgraph package root.

Contains subpackages for the heterogeneous graph store, the autodiff core, the
relational model, contrastive training, serving reads and recall evaluation.
See `rankgraph.main` for the command-line entrypoint.
"""

__version__ = "0.1.0"
