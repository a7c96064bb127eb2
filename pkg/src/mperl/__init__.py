"""Entity classification on knowledge graphs with a Markov-halting R-GCN and an evidential head."""

__version__ = "0.1.0"
