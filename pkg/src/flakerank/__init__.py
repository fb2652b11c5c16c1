"""Flaky CI failure labeling and RFM-based prioritization of failure categories."""

__version__ = "0.1.0"
