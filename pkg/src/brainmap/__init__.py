"""Multimodal brain-graph classification: atlas-guided node filtering,
attention-gated fusion, SVD feature distillation and a GCN classifier."""

__version__ = "0.1.0"
