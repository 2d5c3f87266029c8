"""Unsupervised multiplex-graph embedding with per-layer MLP encoders.

Each graph layer gets its own MLP encoder over the shared node features.
Encoders are trained jointly with a local-structure-preserving softmax loss
over high-order proximities and a CCA-style correlation/decorrelation loss;
the final embedding is the mean of the per-layer embeddings.
"""

__version__ = "0.1.0"
