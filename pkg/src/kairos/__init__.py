"""Trace-driven ABR streaming lab: attention-based quantile throughput
prediction feeding an uncertainty-aware MPC bitrate controller."""

__version__ = "0.1.0"
