"""Event-QA harness: causal-graph prompts, pluggable backends, per-category scoring."""

__version__ = "0.1.0"
