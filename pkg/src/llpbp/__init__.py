"""Learning from label proportions with belief-propagation pseudo-labels."""

__version__ = "0.1.0"
