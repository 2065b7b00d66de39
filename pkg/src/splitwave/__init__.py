"""splitwave: deterministic split-learning simulation over modeled mmWave links."""

__version__ = "0.1.0"
