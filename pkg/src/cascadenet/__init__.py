"""Fake-news cascade classification over a user-cluster hypergraph.

Stages: ingest interactions and cascades, partition the social graph,
build the cascade hypergraph, featurize cascades, train a hypergraph
convolution classifier.
"""

__version__ = "0.1.0"
