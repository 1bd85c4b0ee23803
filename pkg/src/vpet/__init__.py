"""Environment-aware motion generation for an articulated quadruped."""

__version__ = "0.1.0"
