"""Global-local iterative coupling for quasi-static nonlinear structures."""

__version__ = "0.1.0"
