"""
dynamic_hat package root.

Weight-shared elastic Transformer training, latency prediction, latency-constrained
architecture search and run-time switching between searched operating points.
"""

__version__ = "0.1.0"
