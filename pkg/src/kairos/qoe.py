"""Linear QoE model: bitrate utility minus rebuffering and switching penalties."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence


@dataclass(frozen=True)
class QoEBreakdown:
    utility: float
    rebuffer_penalty: float
    smoothness_penalty: float
    average_qoe: float
    total_qoe: float
    chunks_scored: int

    def to_dict(self) -> dict:
        return asdict(self)


def chunk_qoe(bitrate: float, prev_bitrate: float | None, rebuffer: float,
              rebuf_penalty: float, smooth_penalty: float) -> float:
    switch = 0.0 if prev_bitrate is None else abs(bitrate - prev_bitrate)
    return bitrate - rebuf_penalty * rebuffer - smooth_penalty * switch


def qoe_from_series(bitrates: Sequence[float], rebuffers: Sequence[float],
                    rebuf_penalty: float = 4.3, smooth_penalty: float = 1.0) -> QoEBreakdown:
    """Average over chunks 2..N; the first chunk (startup) is not scored."""
    n = len(bitrates)
    if n < 2 or len(rebuffers) != n:
        raise ValueError("need at least two chunks with matching rebuffer entries")
    util = rebuf = smooth = total = 0.0
    for i in range(1, n):
        switch = abs(bitrates[i] - bitrates[i - 1])
        util += bitrates[i]
        rebuf += rebuffers[i]
        smooth += switch
        total += chunk_qoe(bitrates[i], bitrates[i - 1], rebuffers[i], rebuf_penalty, smooth_penalty)
    m = n - 1
    return QoEBreakdown(
        utility=util / m,
        rebuffer_penalty=rebuf_penalty * rebuf / m,
        smoothness_penalty=smooth_penalty * smooth / m,
        average_qoe=total / m,
        total_qoe=total,
        chunks_scored=m,
    )
