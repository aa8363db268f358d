from __future__ import annotations

from typing import NamedTuple


class Event(NamedTuple):
    label: str
    onset: float
    offset: float

    @property
    def duration(self) -> float:
        return self.offset - self.onset
