# Tests package for rankgraph
