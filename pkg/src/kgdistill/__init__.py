"""Multi-teacher knowledge-graph distillation with reinforced teacher selection."""

__version__ = "0.1.0"
