"""Turn plane geometry diagrams into formal propositions, and score the result."""

__version__ = "0.1.0"
