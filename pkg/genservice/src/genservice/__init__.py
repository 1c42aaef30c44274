"""Generation sidecar: nucleus-sampled text generation and continuation
log-likelihood scoring over a locally hosted language model."""

__version__ = "0.1.0"
