"""Deterministic byte-stream source for reproducible runs.

With a seed, bytes come from an HMAC-SHA256 counter stream so fixtures and
CLI runs are bit-reproducible; without one, ``secrets`` supplies entropy.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets


class ByteSource:
    def __init__(self, seed: int | bytes | None = None):
        if seed is None:
            self._key = None
        else:
            if isinstance(seed, int):
                seed = seed.to_bytes(32, "big", signed=False)
            self._key = hashlib.sha256(seed).digest()
            self._counter = 0
            self._pool = b""

    def read(self, n: int) -> bytes:
        if self._key is None:
            return secrets.token_bytes(n)
        while len(self._pool) < n:
            block = hmac.new(self._key, self._counter.to_bytes(8, "big"), hashlib.sha256).digest()
            self._counter += 1
            self._pool += block
        out, self._pool = self._pool[:n], self._pool[n:]
        return out

    def read_u64(self) -> int:
        return int.from_bytes(self.read(8), "big")
