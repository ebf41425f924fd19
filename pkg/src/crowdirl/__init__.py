"""crowdirl: socially-aware local navigation with reward learning from ranked demos."""

__version__ = "0.1.0"
