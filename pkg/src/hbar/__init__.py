"""HSIC-bottleneck regularization (HBaR) for adversarially robust classifiers."""

__version__ = "0.1.0"
