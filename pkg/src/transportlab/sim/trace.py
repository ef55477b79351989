"""Trace records: newline-delimited JSON with frozen field names."""

import hashlib
import json

RECORD_KINDS = ("event", "instr", "tx", "rx", "drop", "app", "error")
SUMMARY_KINDS = ("tx", "rx", "drop", "app", "error")


def _plain(value):
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, bytes):
        return value.hex()
    return value


class TraceLog:
    def __init__(self, level="full"):
        self.level = level
        self.records = []

    def add(self, t, host, kind, **details):
        if self.level == "off":
            return
        if self.level == "summary" and kind not in SUMMARY_KINDS:
            return
        rec = {"t": t, "host": host, "kind": kind}
        rec.update({k: _plain(v) for k, v in details.items()})
        self.records.append(rec)

    def lines(self):
        return [json.dumps(r, sort_keys=True) for r in self.records]

    def dump(self, path):
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def digest(self):
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()
