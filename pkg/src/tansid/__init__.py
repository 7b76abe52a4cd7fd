"""Neural dynamics-model learning with tangent-space regularization."""

__version__ = "0.1.0"
