"""Append-only run log: one JSON record per event, trigger, decision or
plan, with a monotonic sequence number.  Serialization sorts keys so two
identical runs produce byte-identical logs."""

from __future__ import annotations

import json
from typing import Callable


class RunLog:
    def __init__(self):
        self.records: list[dict] = []
        self._seq = 0
        self._subscribers: list[Callable[[dict], None]] = []

    def append(self, kind: str, t: float, **payload) -> dict:
        record = {"seq": self._seq, "t": round(t, 6), "kind": kind}
        record.update(payload)
        self._seq += 1
        self.records.append(record)
        for fn in list(self._subscribers):
            fn(record)
        return record

    def subscribe(self, fn: Callable[[dict], None]) -> None:
        self._subscribers.append(fn)

    def unsubscribe(self, fn: Callable[[dict], None]) -> None:
        if fn in self._subscribers:
            self._subscribers.remove(fn)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n"
            for r in self.records
        )

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]


def read_jsonl(text: str) -> list[dict]:
    records = []
    for line in text.splitlines():
        line = line.strip()
        if line:
            records.append(json.loads(line))
    return records


def read_runlog(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return read_jsonl(fh.read())
