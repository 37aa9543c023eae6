"""Throughput-based adaptive bitrate: pick the best feasible QP level."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass
class BandwidthEstimate:
    """EWMA of measured segment throughput."""

    ewma_bps: float = 0.0
    last_download_s: float = 0.0
    safety: float = 0.8
    smoothing: float = 0.5  # weight of the newest sample

    def update(self, byte_count: int, seconds: float) -> None:
        if seconds <= 0:
            return
        sample = byte_count / seconds
        self.last_download_s = seconds
        if self.ewma_bps <= 0:
            self.ewma_bps = sample
        else:
            self.ewma_bps = self.smoothing * sample + (1.0 - self.smoothing) * self.ewma_bps


def abr_select(estimate: BandwidthEstimate, ladder, fps: float):
    """Lowest QP whose mean frame bytes * fps fits the safe throughput.

    Returns (level, stall_risk). When no level fits, the highest-QP level is
    returned with the stall-risk flag raised.
    """
    if not ladder:
        raise ValueError("empty QP ladder")
    budget = estimate.safety * estimate.ewma_bps
    for level in ladder:  # ladder is sorted QP ascending = quality descending
        if level.mean_frame_kb * 1000.0 * fps <= budget:
            return level, False
    return ladder[-1], True
