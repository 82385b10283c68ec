"""Auditable graph retrieval: PCST-merge subgraph retrieval, an additive graph
encoder with exact per-node attribution, and an evidence-routing audit."""

__version__ = "0.1.0"
