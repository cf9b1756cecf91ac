"""Question-schema graphs and a relation-aware graph attention encoder in numpy."""

__version__ = "0.1.0"
