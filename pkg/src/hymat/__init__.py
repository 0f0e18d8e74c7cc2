"""Column-store query engine with early, late, ultra-late and hybrid materialization."""

__version__ = "0.1.0"
