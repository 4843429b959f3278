"""funnellens: hierarchical encoder-decoder models for customer purchase funnels.

A basket encoder turns each purchase session into a vector, a funnel
encoder summarizes the customer's session history, and either an
autoregressive decoder predicts the full next basket or a regression head
predicts days until the next purchase. On top sit the training loop,
an evaluation harness, and a cluster-based behavioral anomaly detector.
"""

__version__ = "0.1.0"
