"""Environment record store: CRUD, fuzzy token queries, saved ODDs.

Records are classified and tag-normalized. A query is a list of raw words;
connector stopwords are dropped and every remaining token must fuzzy-match
at least one tag of a record for it to qualify (exact match, or edit
distance <= 1 for tokens of length >= 4). Results order by newest first,
then ascending record id, so result lists are stable for golden tests.

The persistent form is a JSON-lines log, one record object per line;
``delete`` appends a tombstone line ``{"record_id": ..., "deleted": true}``
and opening a log replays it in order.
"""

from __future__ import annotations

import enum
import json
import re
import threading
from dataclasses import dataclass, field, replace

from dfp import DfpError
from dfp.hal import AbstractFrame, DeviceKind


class EnvModelError(DfpError):
    pass


class DuplicateId(EnvModelError):
    pass


class NotFound(EnvModelError):
    pass


class InvalidRecord(EnvModelError):
    pass


class EmptyQuery(EnvModelError):
    pass


class DuplicateOddName(EnvModelError):
    pass


class OddNotFound(EnvModelError):
    pass


class RecordClass(enum.Enum):
    OBJECT = "object"
    LANE = "lane"
    ROAD_FEATURE = "road_feature"
    WEATHER = "weather"
    LOCALIZATION = "localization"
    V2X_EVENT = "v2x_event"


class Source(enum.Enum):
    PERCEPTION = "perception"
    LOCALIZATION = "localization"
    FUSION = "fusion"
    V2X = "v2x"
    CLOUD = "cloud"


STOPWORDS = frozenset({"on", "in", "at", "the", "a", "an", "of", "and", "with"})
FUZZY_MIN_LEN = 4

_TAG_RE = re.compile(r"^[a-z0-9_]+$")


@dataclass(frozen=True)
class EnvRecord:
    record_id: int
    record_class: RecordClass
    tags: frozenset
    timestamp_ns: int
    attributes: dict = field(default_factory=dict)
    position: tuple | None = None  # (x_m, y_m)
    source: Source = Source.PERCEPTION

    def validate(self) -> None:
        if not 0 <= self.record_id < 2**64:
            raise InvalidRecord(f"record_id out of u64 range: {self.record_id}")
        if not self.tags:
            raise InvalidRecord("tags must be non-empty")
        for tag in self.tags:
            if not isinstance(tag, str) or not _TAG_RE.match(tag):
                raise InvalidRecord(f"bad tag {tag!r} (want [a-z0-9_]+)")
        if self.position is not None and len(self.position) != 2:
            raise InvalidRecord("position must be (x_m, y_m)")

    def to_json_obj(self) -> dict:
        return {
            "record_id": self.record_id,
            "class": self.record_class.value,
            "tags": sorted(self.tags),
            "timestamp_ns": self.timestamp_ns,
            "attributes": dict(self.attributes),
            "position": list(self.position) if self.position is not None else None,
            "source": self.source.value,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "EnvRecord":
        rec = cls(
            record_id=int(obj["record_id"]),
            record_class=RecordClass(obj["class"]),
            tags=frozenset(obj["tags"]),
            timestamp_ns=int(obj["timestamp_ns"]),
            attributes=dict(obj.get("attributes", {})),
            position=tuple(obj["position"]) if obj.get("position") is not None else None,
            source=Source(obj.get("source", "perception")),
        )
        rec.validate()
        return rec


def levenshtein(a: str, b: str) -> int:
    """Iterative two-row edit distance."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        row = [i]
        for j, cb in enumerate(b, 1):
            row.append(min(row[-1] + 1, prev[j] + 1, prev[j - 1] + (ca != cb)))
        prev = row
    return prev[-1]


def normalize_token(word: str) -> str:
    return word.strip().lower()


def fuzzy_match(token: str, tag: str) -> bool:
    if token == tag:
        return True
    if len(token) < FUZZY_MIN_LEN:
        return False
    return levenshtein(token, tag) <= 1


@dataclass(frozen=True)
class OddQuery:
    tokens: tuple
    class_filter: RecordClass | None = None
    time_range: tuple | None = None  # (t0_ns, t1_ns) inclusive

    def effective_tokens(self) -> list[str]:
        out = [normalize_token(w) for w in self.tokens]
        out = [w for w in out if w and w not in STOPWORDS]
        if not out:
            raise EmptyQuery(f"no searchable tokens in {list(self.tokens)!r}")
        return out

    def to_json_obj(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "class_filter": self.class_filter.value if self.class_filter else None,
            "time_range": list(self.time_range) if self.time_range else None,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "OddQuery":
        return cls(
            tokens=tuple(obj["tokens"]),
            class_filter=RecordClass(obj["class_filter"]) if obj.get("class_filter") else None,
            time_range=tuple(obj["time_range"]) if obj.get("time_range") else None,
        )


# frame kind -> (class, base tags, source) for ingestion
INGEST_TABLE = {
    DeviceKind.RADAR: (RecordClass.OBJECT, ("vehicle", "lead"), Source.PERCEPTION),
    DeviceKind.CAMERA: (RecordClass.OBJECT, ("camera", "detection"), Source.PERCEPTION),
    DeviceKind.LIDAR: (RecordClass.OBJECT, ("lidar", "obstacle"), Source.PERCEPTION),
    DeviceKind.GPS: (RecordClass.LOCALIZATION, ("gps", "fix"), Source.LOCALIZATION),
    DeviceKind.IMU: (RecordClass.LOCALIZATION, ("imu", "motion"), Source.LOCALIZATION),
    DeviceKind.HDMAP: (RecordClass.ROAD_FEATURE, ("map", "lane"), Source.FUSION),
    DeviceKind.V2X: (RecordClass.V2X_EVENT, ("v2x",), Source.V2X),
}


class EnvStore:
    """In-memory record store with an optional append-only JSONL log."""

    def __init__(self, log_path=None):
        self._records: dict[int, EnvRecord] = {}
        self._odds: dict[str, OddQuery] = {}
        self._next_id = 0
        self._log_path = log_path
        self._lock = threading.RLock()

    # -- persistence ------------------------------------------------------------

    @classmethod
    def open(cls, path) -> "EnvStore":
        """Rebuild a store by replaying a JSONL record log."""
        store = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if obj.get("deleted"):
                    store._records.pop(int(obj["record_id"]), None)
                    continue
                rec = EnvRecord.from_json_obj(obj)
                store._records[rec.record_id] = rec
        if store._records:
            store._next_id = max(store._records) + 1
        store._log_path = path
        return store

    def dump_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rid in sorted(self._records):
                fh.write(json.dumps(self._records[rid].to_json_obj(), sort_keys=True))
                fh.write("\n")

    def _log(self, obj: dict) -> None:
        if self._log_path is None:
            return
        with open(self._log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(obj, sort_keys=True))
            fh.write("\n")

    # -- CRUD -------------------------------------------------------------------

    def create(self, rec: EnvRecord) -> int:
        with self._lock:
            rec.validate()
            if rec.record_id in self._records:
                raise DuplicateId(f"record {rec.record_id} exists")
            self._records[rec.record_id] = rec
            self._next_id = max(self._next_id, rec.record_id + 1)
            self._log(rec.to_json_obj())
            return rec.record_id

    def read(self, record_id: int) -> EnvRecord:
        with self._lock:
            try:
                return self._records[record_id]
            except KeyError:
                raise NotFound(f"no record {record_id}") from None

    def update(self, record_id: int, patch: dict) -> EnvRecord:
        """Apply a field patch; the class is identity-bearing and immutable."""
        with self._lock:
            current = self.read(record_id)
            fields = {}
            for key, value in patch.items():
                if key in ("class", "record_class"):
                    new_class = value if isinstance(value, RecordClass) else RecordClass(value)
                    if new_class != current.record_class:
                        raise InvalidRecord("record class cannot change")
                    continue
                if key == "tags":
                    fields["tags"] = frozenset(value)
                elif key == "attributes":
                    fields["attributes"] = dict(value)
                elif key == "position":
                    fields["position"] = tuple(value) if value is not None else None
                elif key == "timestamp_ns":
                    fields["timestamp_ns"] = int(value)
                elif key == "source":
                    fields["source"] = value if isinstance(value, Source) else Source(value)
                elif key == "record_id":
                    raise InvalidRecord("record_id cannot change")
                else:
                    raise InvalidRecord(f"unknown record field {key!r}")
            updated = replace(current, **fields)
            updated.validate()
            self._records[record_id] = updated
            self._log(updated.to_json_obj())
            return updated

    def delete(self, record_id: int) -> None:
        with self._lock:
            if record_id not in self._records:
                raise NotFound(f"no record {record_id}")
            del self._records[record_id]
            self._log({"record_id": record_id, "deleted": True})

    def count(self) -> int:
        with self._lock:
            return len(self._records)

    def all_records(self) -> list[EnvRecord]:
        with self._lock:
            return [self._records[rid] for rid in sorted(self._records)]

    # -- queries -----------------------------------------------------------------

    def query(self, q: OddQuery) -> list[EnvRecord]:
        tokens = q.effective_tokens()
        with self._lock:
            snapshot = list(self._records.values())
        out = []
        for rec in snapshot:
            if q.class_filter is not None and rec.record_class != q.class_filter:
                continue
            if q.time_range is not None:
                t0, t1 = q.time_range
                if not (t0 <= rec.timestamp_ns <= t1):
                    continue
            if all(any(fuzzy_match(tok, tag) for tag in rec.tags) for tok in tokens):
                out.append(rec)
        out.sort(key=lambda r: (-r.timestamp_ns, r.record_id))
        return out

    # -- saved ODDs ----------------------------------------------------------------

    def save_odd(self, name: str, q: OddQuery) -> None:
        with self._lock:
            q.effective_tokens()  # reject stopword-only definitions up front
            if name in self._odds:
                raise DuplicateOddName(f"odd {name!r} exists")
            self._odds[name] = q

    def run_odd(self, name: str) -> list[EnvRecord]:
        with self._lock:
            try:
                q = self._odds[name]
            except KeyError:
                raise OddNotFound(f"no odd {name!r}") from None
        return self.query(q)

    def odd_names(self) -> list[str]:
        with self._lock:
            return sorted(self._odds)

    # -- ingestion -----------------------------------------------------------------

    def ingest(self, frame) -> int:
        """Map an abstract frame or a service-output mapping to a record."""
        with self._lock:
            if isinstance(frame, AbstractFrame):
                rec = self._record_from_frame(frame)
            elif isinstance(frame, dict):
                rec = self._record_from_mapping(frame)
            else:
                raise InvalidRecord(f"cannot ingest {type(frame).__name__}")
            rec.validate()
            self._records[rec.record_id] = rec
            self._next_id = rec.record_id + 1
            self._log(rec.to_json_obj())
            return rec.record_id

    def _record_from_frame(self, frame: AbstractFrame) -> EnvRecord:
        entry = INGEST_TABLE.get(frame.kind)
        if entry is None:
            raise InvalidRecord(f"no ingestion rule for kind {frame.kind!r}")
        record_class, tags, source = entry
        position = None
        if frame.kind == DeviceKind.RADAR:
            position = (frame.normalized["range_m"], 0.0)
        return EnvRecord(
            record_id=self._next_id,
            record_class=record_class,
            tags=frozenset(tags),
            timestamp_ns=frame.timestamp_ns,
            attributes=dict(frame.normalized),
            position=position,
            source=source,
        )

    def _record_from_mapping(self, payload: dict) -> EnvRecord:
        try:
            record_class = RecordClass(payload["class"])
        except KeyError:
            raise InvalidRecord("mapping ingest needs a 'class' field") from None
        attributes = dict(payload.get("attributes", {}))
        tags = set(payload.get("tags", ()))
        # boolean-true attributes double as tags: {"rain": true} -> {"rain"}
        for key, value in attributes.items():
            if value is True and _TAG_RE.match(str(key)):
                tags.add(key)
        source = Source(payload.get("source", "fusion"))
        position = payload.get("position")
        return EnvRecord(
            record_id=self._next_id,
            record_class=record_class,
            tags=frozenset(tags),
            timestamp_ns=int(payload.get("timestamp_ns", 0)),
            attributes=attributes,
            position=tuple(position) if position is not None else None,
            source=source,
        )
