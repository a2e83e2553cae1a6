"""JSON-lines event log for debugging runs; disabled by default."""

from __future__ import annotations

import json
from typing import IO


class EventLog:
    def __init__(self, sink: IO[str] | None = None, keep_in_memory: bool = False):
        self.sink = sink
        self.records: list[dict] | None = [] if keep_in_memory else None

    @property
    def enabled(self) -> bool:
        return self.sink is not None or self.records is not None

    def emit(self, kind: str, **fields) -> None:
        if not self.enabled:
            return
        record = {"event": kind, **fields}
        if self.records is not None:
            self.records.append(record)
        if self.sink is not None:
            self.sink.write(json.dumps(record) + "\n")


NULL_LOG = EventLog()
