"""Delay-based anonymizing relay between clients and the server.

Every submitted payload is held for an independent U(0, T) delay and then
released in release-time order. Envelopes carry no sender field, so the
stream the server sees is unlinkable to submitters by construction; only
the payload bytes and their order leave the shuffler.
"""

from __future__ import annotations

import heapq
import statistics
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

_NONCE_BOUND = 2**63


def negotiate_T(proposals: Sequence[float]) -> float:
    """Median of the clients' proposed shuffling parameters."""
    if len(proposals) == 0:
        raise ValueError("need at least one proposal for T")
    if any(not p > 0 for p in proposals):
        raise ValueError("proposals for T must all be > 0")
    return float(statistics.median(proposals))


@dataclass(order=True, frozen=True)
class ShuffleEnvelope:
    release_time: float
    nonce: int
    payload: bytes = field(compare=False)


class Shuffler:
    """Owns the pending queue and its generator; one instance per run."""

    def __init__(self, T: float, rng: np.random.Generator):
        if not T > 0:
            raise ValueError(f"shuffling parameter T must be > 0, got {T}")
        self.T = float(T)
        self._rng = rng
        self._pending: List[ShuffleEnvelope] = []

    def __len__(self) -> int:
        return len(self._pending)

    def submit(self, payload: bytes, now: float) -> None:
        if now < 0:
            raise ValueError(f"submission time must be >= 0, got {now}")
        delay = self._rng.uniform(0.0, self.T)
        nonce = int(self._rng.integers(_NONCE_BOUND))
        heapq.heappush(self._pending, ShuffleEnvelope(now + delay, nonce, bytes(payload)))

    def drain(self, until: float) -> List[bytes]:
        """Release every payload due by ``until``, earliest first."""
        if until < 0:
            raise ValueError(f"drain time must be >= 0, got {until}")
        out = []
        while self._pending and self._pending[0].release_time <= until:
            out.append(heapq.heappop(self._pending).payload)
        return out

    def release_times(self) -> List[float]:
        """Scheduled release times of pending envelopes, in no particular order."""
        return [e.release_time for e in self._pending]
