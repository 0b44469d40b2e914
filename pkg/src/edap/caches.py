"""Set-associative LRU cache used by the machine model and the timing walk."""

from __future__ import annotations

from collections import OrderedDict

LINE_BYTES = 128


class SetAssociativeCache:
    """Line-granular cache indexed by effective address, LRU per set."""

    def __init__(self, size_bytes: int, ways: int = 8, line_bytes: int = LINE_BYTES):
        if size_bytes % (ways * line_bytes):
            raise ValueError("cache size must be a multiple of ways * line size")
        self.line_bytes = line_bytes
        self.ways = ways
        self.n_sets = size_bytes // (ways * line_bytes)
        self._sets: list[OrderedDict[int, object]] = [OrderedDict() for _ in range(self.n_sets)]

    def _set_for(self, line_ea: int) -> OrderedDict:
        return self._sets[(line_ea // self.line_bytes) % self.n_sets]

    def line_address(self, ea: int) -> int:
        return ea - (ea % self.line_bytes)

    def lookup(self, line_ea: int):
        """Return the stored value and refresh its recency, or None."""
        s = self._set_for(line_ea)
        value = s.get(line_ea)
        if value is not None:
            s.move_to_end(line_ea)
        return value

    def contains(self, line_ea: int) -> bool:
        return line_ea in self._set_for(line_ea)

    def insert(self, line_ea: int, value) -> tuple[int, object] | None:
        """Install a line; returns the evicted (ea, value) if the set was full."""
        s = self._set_for(line_ea)
        evicted = None
        if line_ea not in s and len(s) >= self.ways:
            evicted = s.popitem(last=False)
        s[line_ea] = value
        s.move_to_end(line_ea)
        return evicted

    def remove(self, line_ea: int) -> None:
        self._set_for(line_ea).pop(line_ea, None)

    def lines(self):
        for s in self._sets:
            yield from s.items()

    def clear(self) -> None:
        for s in self._sets:
            s.clear()

    def __len__(self) -> int:
        return sum(len(s) for s in self._sets)
