"""Configuration traces: gzip-compressed newline-delimited JSON.

The first line is a header carrying the box; every further line is one frame
`{"sweep": s, "rods": [["H", x, y], ...]}` with rods sorted, so equal
configurations always serialize to equal lines. The gzip header carries no
timestamp, so equal runs produce byte-identical files.
"""

from __future__ import annotations

import gzip
import io
import json
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple, Union

from core.errors import ConfigError
from core.lattice import BoxSpec, Orientation, Rod, RodConfig


TRACE_SCHEMA_VERSION = 1


class TraceWriter:
    def __init__(self, path: Union[str, Path], box: BoxSpec, **header: Any):
        self.path = Path(path)
        self.box = box
        self._raw = gzip.GzipFile(filename="", mode="wb", fileobj=open(self.path, "wb"), mtime=0)
        self._text = io.TextIOWrapper(self._raw, encoding="utf-8", newline="\n")
        self.frames = 0
        head: Dict[str, Any] = {
            "kind": "trace_header",
            "schema_version": TRACE_SCHEMA_VERSION,
            "box": box.to_dict(),
        }
        head.update(header)
        self._write(head)

    def _write(self, obj: Dict[str, Any]) -> None:
        self._text.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")

    def write_frame(self, sweep: int, config: RodConfig) -> None:
        self._write({"sweep": int(sweep), "rods": [list(r.as_row()) for r in config.sorted_rods()]})
        self.frames += 1

    def close(self) -> None:
        fileobj = self._raw.fileobj
        self._text.close()
        if fileobj is not None:
            fileobj.close()

    def __call__(self, sweep: int, config: RodConfig) -> None:
        self.write_frame(sweep, config)

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _box_from_header(head: Dict[str, Any]) -> BoxSpec:
    b = head.get("box") or {}
    return BoxSpec(
        L=int(b["L"]),
        k=int(b["k"]),
        containment=b.get("containment", "center_in_box"),
        bc=b.get("bc", "open"),
        height=int(b.get("height", b["L"])),
    )


def read_trace(
    path: Union[str, Path],
    *,
    limit: Optional[int] = None,
) -> Tuple[BoxSpec, Dict[str, Any], Iterator[Tuple[int, RodConfig]]]:
    """Return (box, header, frames); frames is a lazy (sweep, config) stream."""
    p = Path(path)
    if not p.exists():
        raise ConfigError("trace", f"file not found: {p}")
    with gzip.open(p, "rt", encoding="utf-8") as fh:
        first = fh.readline()
    try:
        head = json.loads(first)
    except json.JSONDecodeError:
        raise ConfigError("trace", f"{p} does not start with a trace header") from None
    if head.get("kind") != "trace_header":
        raise ConfigError("trace", f"{p} does not start with a trace header")
    if head.get("schema_version") != TRACE_SCHEMA_VERSION:
        raise ConfigError("trace", f"unsupported trace schema {head.get('schema_version')!r}")
    box = _box_from_header(head)

    def frames() -> Iterator[Tuple[int, RodConfig]]:
        with gzip.open(p, "rt", encoding="utf-8") as fh:
            fh.readline()
            for count, line in enumerate(fh):
                if limit is not None and count >= limit:
                    return
                if not line.strip():
                    continue
                frame = json.loads(line)
                rods = [Rod(Orientation.parse(o), int(x), int(y)) for o, x, y in frame["rods"]]
                yield int(frame["sweep"]), RodConfig.from_rods(box, rods)

    return box, head, frames()


__all__ = ["TRACE_SCHEMA_VERSION", "TraceWriter", "read_trace"]
