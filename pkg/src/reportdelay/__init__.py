"""Reporting-delay correction for case-count nowcasts and forecasts."""
from __future__ import annotations

__version__ = "0.1.0"
