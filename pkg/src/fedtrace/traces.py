"""Execution-trace data model and line-oriented trace file I/O.

A script trace is the sequence of instrumented browser API calls one
script performed on one page load. Property reads/writes are recorded
as calls too: a write carries the written value as the single argument,
a read carries no arguments. Argument and return values are reduced to
scalar summaries at record-construction time so traces stay compact and
hashable.

Trace file format (one JSON object per line, UTF-8, '\n' terminated):

    {"script_id": "<url>#<hex>", "source_domain": "news.example",
     "calls": [["Interface.member", [<arg>, ...], <ret>, <dropped>], ...]}

where <arg>/<ret> are null, a bool, a float, a string (<= 256 chars), or
{"len": L, "hash": "<16 hex>"} for a summarized long string. <dropped>
is the count of arguments elided beyond MAX_ARGS. Blank lines are
ignored. Writes are byte-deterministic (sorted keys, fixed separators).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import InvalidInput, ParseError

MAX_ARGS = 8
LONG_STRING_THRESHOLD = 256

# Fixed order; bit i of a type bitmask refers to FP_TYPES[i].
FP_TYPES = ("canvas", "canvas_font", "webrtc", "audio")
_TYPE_BIT = {name: 1 << i for i, name in enumerate(FP_TYPES)}


@dataclass(frozen=True, slots=True)
class LongString:
    """Summary of a string longer than LONG_STRING_THRESHOLD."""

    length: int
    digest: str  # 16 hex chars (64-bit blake2b)

    def to_json(self) -> dict:
        return {"len": self.length, "hash": self.digest}


Scalar = None | bool | float | str | LongString


def summarize_value(value) -> Scalar:
    """Canonical scalar summary of a raw argument/return value."""
    if value is None or isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        if len(value) <= LONG_STRING_THRESHOLD:
            return value
        digest = hashlib.blake2b(value.encode("utf-8"), digest_size=8).hexdigest()
        return LongString(len(value), digest)
    if isinstance(value, LongString):
        return value
    raise InvalidInput(f"unsupported trace value type: {type(value).__name__}")


@dataclass(frozen=True, slots=True)
class ApiCallRecord:
    """One instrumented call. args must already be canonical summaries."""

    api_name: str
    args: tuple = ()
    return_value: Scalar = None
    dropped_args: int = 0

    def __post_init__(self):
        if not self.api_name:
            raise InvalidInput("api_name must be non-empty")
        if self.api_name.count(".") > 1:
            raise InvalidInput(f"api_name has more than one dot: {self.api_name!r}")
        if len(self.args) > MAX_ARGS:
            raise InvalidInput(f"args exceed MAX_ARGS={MAX_ARGS}; truncate via api_call()")

    @property
    def interface(self) -> str:
        return self.api_name.partition(".")[0]

    @property
    def member(self) -> str:
        head, _, tail = self.api_name.partition(".")
        return tail or head


def api_call(api_name: str, args=(), return_value=None) -> ApiCallRecord:
    """Build a record from raw values: summarize scalars, truncate args."""
    summarized = tuple(summarize_value(a) for a in args)
    dropped = 0
    if len(summarized) > MAX_ARGS:
        dropped = len(summarized) - MAX_ARGS
        summarized = summarized[:MAX_ARGS]
    return ApiCallRecord(api_name, summarized, summarize_value(return_value), dropped)


@dataclass(frozen=True, slots=True)
class ScriptTrace:
    script_id: str
    source_domain: str
    calls: tuple[ApiCallRecord, ...] = ()

    def __post_init__(self):
        if not self.script_id:
            raise InvalidInput("script_id must be non-empty")
        if not self.source_domain:
            raise InvalidInput("source_domain must be non-empty")


@dataclass(frozen=True, slots=True)
class LabeledScript:
    trace: ScriptTrace
    label: bool
    fp_types: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        bad = self.fp_types - set(FP_TYPES)
        if bad:
            raise InvalidInput(f"unknown fingerprinting types: {sorted(bad)}")
        if self.label != bool(self.fp_types):
            raise InvalidInput("label must equal bool(fp_types)")


def types_to_bitmask(types) -> int:
    mask = 0
    for t in types:
        try:
            mask |= _TYPE_BIT[t]
        except KeyError:
            raise InvalidInput(f"unknown fingerprinting type: {t!r}") from None
    return mask


def bitmask_to_types(mask: int) -> frozenset[str]:
    if not 0 <= mask < 16:
        raise InvalidInput(f"type bitmask out of range: {mask}")
    return frozenset(name for name, bit in _TYPE_BIT.items() if mask & bit)


_HEX = set("0123456789abcdefABCDEF")


def canonical_script_id(url: str, content_hash: str) -> str:
    """Stable identity: same URL serving different bytes stays distinct."""
    if not url:
        raise InvalidInput("url must be non-empty")
    if not content_hash or not set(content_hash) <= _HEX:
        raise InvalidInput(f"content_hash must be a non-empty hex digest: {content_hash!r}")
    return f"{url}#{content_hash}"


def _scalar_to_json(v: Scalar):
    if isinstance(v, LongString):
        return v.to_json()
    return v


def _scalar_from_json(v) -> Scalar:
    if isinstance(v, dict):
        try:
            return LongString(int(v["len"]), str(v["hash"]))
        except (KeyError, TypeError, ValueError):
            raise ValueError(f"bad long-string summary: {v!r}") from None
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return v
    if isinstance(v, (int, float)):
        return float(v)
    raise ValueError(f"bad scalar: {v!r}")


def trace_to_json_line(trace: ScriptTrace) -> str:
    obj = {
        "script_id": trace.script_id,
        "source_domain": trace.source_domain,
        "calls": [
            [c.api_name, [_scalar_to_json(a) for a in c.args],
             _scalar_to_json(c.return_value), c.dropped_args]
            for c in trace.calls
        ],
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _trace_from_obj(obj) -> ScriptTrace:
    calls = []
    for raw in obj["calls"]:
        api, args, ret, dropped = raw
        calls.append(ApiCallRecord(
            str(api),
            tuple(_scalar_from_json(a) for a in args),
            _scalar_from_json(ret),
            int(dropped),
        ))
    return ScriptTrace(str(obj["script_id"]), str(obj["source_domain"]), tuple(calls))


def parse_trace_file(path) -> list[ScriptTrace]:
    """Read a trace file; raises ParseError with the offending line number."""
    traces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                traces.append(_trace_from_obj(obj))
            except (ValueError, KeyError, TypeError, IndexError, InvalidInput) as exc:
                raise ParseError(str(exc), line=lineno, path=str(path)) from exc
    return traces


def write_trace_file(traces, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for trace in traces:
            fh.write(trace_to_json_line(trace))
            fh.write("\n")
