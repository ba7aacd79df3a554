"""Nuclear-norm regularized training and Tucker-2 compression of convolutional networks."""

__version__ = "0.1.0"
