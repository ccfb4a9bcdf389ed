"""QUARTS: query-item mismatch classification with a variational query
generator, trained end-to-end through a Bernoulli merge switch on a
self-contained reverse-mode autodiff core."""

__version__ = "0.1.0"
