"""Participants, endpoints, discovery and the two transports.

A ``Domain`` is the desk-scale communication universe: it owns the clock,
the in-process plane and the loopback buses. Participants join a domain
with one transport:

- ``InProcess()``: endpoints match synchronously, samples are delivered as
  references into a per-topic slot arena (no payload copies)
- ``Loopback(port)``: every frame is DFP1-encoded onto an in-memory bus
  that all participants on that port share; the bus may drop frames with a
  seeded probability, and reliable topics recover losses via NACK-driven
  retransmission

Progress on timers and queued frames is made by ``spin``; tests step the
manual clock explicitly, so every protocol outcome is reproducible.
"""

from __future__ import annotations

import json
import random
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from dfp import DfpError
from dfp.middleware.arena import (
    DEFAULT_SLOT_COUNT,
    DEFAULT_SLOT_SIZE,
    BufferHandle,
    PayloadTooLarge,
    SlotArena,
)
from dfp.middleware.qos import Durability, QoSProfile, Reliability, qos_compatible
from dfp.middleware.wire import (
    FLAG_RELIABLE,
    FLAG_TRANSIENT_LOCAL,
    MAX_WIRE_PAYLOAD,
    Frame,
    FrameError,
    MsgType,
    decode_frame,
    encode_frame,
)
from dfp.util import MS, ManualClock, stable_u64

HEARTBEAT_PERIOD_NS = 100 * MS
LIVELINESS_PERIODS = 3
NACK_INTERVAL_NS = 5 * MS
CALL_QUANTUM_NS = 1 * MS

_TOPIC_NAME_RE = re.compile(r"^[a-z0-9_/]+$")


class MiddlewareError(DfpError):
    pass


class TypeHashMismatch(MiddlewareError):
    pass


class TransportUnavailable(MiddlewareError):
    pass


class DuplicateService(MiddlewareError):
    pass


class ServiceNotFound(MiddlewareError):
    pass


class Timeout(MiddlewareError):
    pass


class RemoteError(MiddlewareError):
    def __init__(self, code: int, message: str):
        super().__init__(f"service fault {code}: {message}")
        self.code = code
        self.message = message


class ParticipantClosed(MiddlewareError):
    pass


def type_hash_of(schema: str | bytes) -> int:
    """64-bit content hash of a declared payload schema."""
    return stable_u64(b"type", schema if isinstance(schema, bytes) else schema.encode())


@dataclass(frozen=True)
class TopicDescriptor:
    name: str
    type_hash: int
    qos: QoSProfile = field(default_factory=QoSProfile)

    def __post_init__(self):
        if not _TOPIC_NAME_RE.match(self.name):
            raise MiddlewareError(f"bad topic name {self.name!r} (want [a-z0-9_/]+)")
        if not 0 <= self.type_hash < 2**64:
            raise MiddlewareError(f"type_hash out of u64 range: {self.type_hash}")


@dataclass(frozen=True)
class ServiceDescriptor:
    service_name: str
    request_type_hash: int = 0
    response_type_hash: int = 0

    def __post_init__(self):
        if not self.service_name:
            raise MiddlewareError("service_name must be non-empty")


@dataclass(frozen=True)
class InProcess:
    pass


@dataclass(frozen=True)
class Loopback:
    port: int


@dataclass(frozen=True)
class DiscoveryRecord:
    entity: str  # participant | publisher | subscriber | service
    participant_id: int
    descriptor: object
    liveliness_deadline_ns: int


class Sample:
    """One published datum; ``payload`` is a shared buffer reference."""

    __slots__ = ("topic", "seq", "publisher_id", "timestamp_ns", "payload")

    def __init__(self, topic: str, seq: int, publisher_id: int, timestamp_ns: int,
                 payload: BufferHandle):
        self.topic = topic
        self.seq = seq
        self.publisher_id = publisher_id
        self.timestamp_ns = timestamp_ns
        self.payload = payload

    @property
    def data(self) -> bytes:
        return self.payload.data

    def release(self) -> None:
        """Drop this delivery's reference so the arena slot can recycle."""
        self.payload.release()

    def __repr__(self):
        return (f"Sample(topic={self.topic!r}, seq={self.seq}, "
                f"publisher={self.publisher_id:#x}, len={self.payload.length})")


def _publisher_id(participant_id: int, entity_id: int) -> int:
    return ((participant_id << 24) | entity_id) & 0xFFFFFFFFFFFFFFFF


class _DelayedResponse:
    """Service handler return value that postpones the reply (test harness)."""

    __slots__ = ("data", "delay_ms")

    def __init__(self, data: bytes, delay_ms: int):
        self.data = data
        self.delay_ms = delay_ms


DelayedResponse = _DelayedResponse


class ServiceFault(MiddlewareError):
    """Raise inside a handler to return a typed fault to the caller."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


# --------------------------------------------------------------------------
# discovery database (per participant)
# --------------------------------------------------------------------------


class _DiscoveryDb:
    def __init__(self, self_id: int):
        self.self_id = self_id
        self.peer_last_hb: dict[int, int] = {}
        # key -> ("publisher"|"subscriber", pid, eid) or ("service", pid, name)
        # or ("participant", pid)
        self.records: dict[tuple, dict] = {}

    def heartbeat(self, pid: int, now: int) -> None:
        self.peer_last_hb[pid] = now

    def add(self, key: tuple, info: dict, now: int) -> None:
        self.records[key] = info
        self.heartbeat(key[1], now)

    def remove_participant(self, pid: int) -> list[tuple]:
        gone = [k for k in self.records if k[1] == pid]
        for k in gone:
            del self.records[k]
        self.peer_last_hb.pop(pid, None)
        return gone

    def prune(self, now: int, liveliness_ns: int) -> list[tuple]:
        dead = [pid for pid, last in self.peer_last_hb.items()
                if pid != self.self_id and now - last >= liveliness_ns]
        gone: list[tuple] = []
        for pid in dead:
            gone.extend(self.remove_participant(pid))
        return gone

    def deadline_for(self, pid: int, now: int, liveliness_ns: int) -> int:
        if pid == self.self_id:
            return now + liveliness_ns
        return self.peer_last_hb.get(pid, now) + liveliness_ns


# --------------------------------------------------------------------------
# transports
# --------------------------------------------------------------------------


class LossModel:
    """Seeded Bernoulli frame dropper applied per (frame, receiver) edge."""

    def __init__(self, drop_probability: float, seed: int = 0):
        if not 0.0 <= drop_probability < 1.0:
            raise ValueError("drop probability must be in [0, 1)")
        self.drop_probability = drop_probability
        self._rng = random.Random(seed)

    def drop(self) -> bool:
        return self._rng.random() < self.drop_probability


class _LoopbackBus:
    def __init__(self, port: int, loss: LossModel | None):
        self.port = port
        self.loss = loss
        self.endpoints: list[Participant] = []
        self.frame_log: list[tuple[int, bytes]] = []  # (sender pid, raw frame)
        self.dropped_frames = 0

    def send(self, sender: "Participant", raw: bytes) -> None:
        self.frame_log.append((sender.participant_id, raw))
        for ep in self.endpoints:
            if ep is sender or not ep.alive:
                continue
            if self.loss is not None and self.loss.drop():
                self.dropped_frames += 1
                continue
            ep._inbox.append(raw)


class _InProcTopic:
    def __init__(self, name: str, type_hash: int, arena: SlotArena):
        self.name = name
        self.type_hash = type_hash
        self.arena = arena
        self.publishers: list[Publisher] = []
        self.subscribers: list[Subscriber] = []


class _InProcPlane:
    def __init__(self, domain: "Domain"):
        self.domain = domain
        self.topics: dict[str, _InProcTopic] = {}
        self.participants: list[Participant] = []

    def topic_state(self, desc: TopicDescriptor) -> _InProcTopic:
        state = self.topics.get(desc.name)
        if state is None:
            state = _InProcTopic(
                desc.name,
                desc.type_hash,
                SlotArena(self.domain.arena_slot_size, self.domain.arena_slot_count),
            )
            self.topics[desc.name] = state
        elif state.type_hash != desc.type_hash:
            raise TypeHashMismatch(
                f"topic {desc.name!r} already exists with type_hash "
                f"{state.type_hash:#x}, got {desc.type_hash:#x}"
            )
        return state


# --------------------------------------------------------------------------
# endpoints
# --------------------------------------------------------------------------


class Publisher:
    def __init__(self, participant: "Participant", topic: TopicDescriptor, entity_id: int,
                 arena: SlotArena | None):
        self.participant = participant
        self.topic = topic
        self.entity_id = entity_id
        self.publisher_id = _publisher_id(participant.participant_id, entity_id)
        self.next_seq = 0
        self._arena = arena  # None on the loopback path
        # retained ring: (seq, handle-or-bytes); serves transient-local replay
        # and reliable retransmission
        self._retained: deque = deque()
        self._retain_depth = topic.qos.history.depth  # None = unbounded
        self._matched_subs: tuple = ()
        self.published_count = 0

    @property
    def _retains(self) -> bool:
        return (self.topic.qos.durability == Durability.TRANSIENT_LOCAL
                or (self._arena is None and self.topic.qos.reliability == Reliability.RELIABLE))

    def _retain(self, seq: int, item) -> None:
        if self._arena is not None:
            self._arena.retain(item.slot)
        self._retained.append((seq, item))
        if self._retain_depth is not None and len(self._retained) > self._retain_depth:
            _, old = self._retained.popleft()
            if self._arena is not None:
                old.release()

    def retained_first_seq(self) -> int:
        return self._retained[0][0] if self._retained else self.next_seq

    def publish(self, payload: bytes) -> int:
        return self.participant._publish(self, payload)

    def matched_subscriptions(self) -> int:
        return len(self._matched_subs)


class _RecvState:
    """Per matched remote publisher, on the subscriber side (loopback)."""

    __slots__ = ("topic", "expected", "pending", "last_nack_ns", "reliable_path",
                 "pub_flags", "high_water")

    def __init__(self, topic: str, expected: int, reliable_path: bool, pub_flags: int,
                 high_water: int):
        self.topic = topic
        self.expected = expected
        self.pending: dict[int, bytes] = {}
        self.last_nack_ns = -(10**18)
        self.reliable_path = reliable_path
        self.pub_flags = pub_flags
        # highest next_seq the publisher has announced; lets the reader
        # notice trailing losses that no later data frame would reveal
        self.high_water = high_water


class Subscriber:
    def __init__(self, participant: "Participant", topic: TopicDescriptor, entity_id: int):
        self.participant = participant
        self.topic = topic
        self.entity_id = entity_id
        self._depth = topic.qos.history.depth  # None = keep all
        self._queue: deque[Sample] = deque()
        self._qlock = threading.Lock()
        # loopback receive protocol state, keyed by (pid, eid)
        self._recv: dict[tuple[int, int], _RecvState] = {}
        self.delivered_count = 0
        self.drops_overflow = 0
        self.drops_gap = 0
        self.deadline_misses = 0
        self._deadline_ns = (topic.qos.deadline_ms * MS
                             if topic.qos.deadline_ms is not None else None)
        self._last_activity_ns = participant.domain.now_ns()

    def _enqueue(self, sample: Sample) -> None:
        with self._qlock:
            if self._depth is not None and len(self._queue) >= self._depth:
                old = self._queue.popleft()
                old.release()
                self.drops_overflow += 1
            self._queue.append(sample)
            self.delivered_count += 1
            self._last_activity_ns = self.participant.domain.now_ns()

    def take(self, max_n: int | None = None) -> list[Sample]:
        """Remove and return up to ``max_n`` samples, oldest first.

        Ownership of each returned sample's buffer reference moves to the
        caller; call ``sample.release()`` when done with the payload.
        """
        self.participant._spin_if_needed()
        out: list[Sample] = []
        with self._qlock:
            while self._queue and (max_n is None or len(out) < max_n):
                out.append(self._queue.popleft())
        if self.participant.domain.copying_delivery:
            # measurement baseline: model a read-side deserialization copy
            out = [
                Sample(s.topic, s.seq, s.publisher_id, s.timestamp_ns,
                       BufferHandle(memoryview(s.data).tobytes()))
                for s in out
            ]
        return out

    def queued(self) -> int:
        with self._qlock:
            return len(self._queue)

    def _check_deadline(self, now: int) -> None:
        if self._deadline_ns is None:
            return
        while now - self._last_activity_ns >= self._deadline_ns:
            self.deadline_misses += 1
            self._last_activity_ns += self._deadline_ns


class _ServiceEndpoint:
    def __init__(self, participant: "Participant", descriptor: ServiceDescriptor,
                 entity_id: int, handler):
        self.participant = participant
        self.descriptor = descriptor
        self.entity_id = entity_id
        self.handler = handler
        # replies scheduled for later delivery: (due_ns, caller_pid, request_id,
        # status, body, code)
        self.pending_replies: deque = deque()

    def handle(self, caller_pid: int, request_id: int, request: bytes, now: int) -> None:
        try:
            result = self.handler(request)
        except ServiceFault as exc:
            self.pending_replies.append((now, caller_pid, request_id, 1, exc.message.encode(), exc.code))
            return
        except Exception as exc:  # handler fault propagates as a coded error
            self.pending_replies.append((now, caller_pid, request_id, 1, str(exc).encode(), 1))
            return
        if isinstance(result, _DelayedResponse):
            due = now + result.delay_ms * MS
            self.pending_replies.append((due, caller_pid, request_id, 0, result.data, 0))
        else:
            if not isinstance(result, (bytes, bytearray)):
                raise MiddlewareError("service handler must return bytes")
            self.pending_replies.append((now, caller_pid, request_id, 0, bytes(result), 0))

    def flush(self, now: int) -> None:
        keep: deque = deque()
        while self.pending_replies:
            item = self.pending_replies.popleft()
            if item[0] <= now:
                self.participant._send_response(*item[1:])
            else:
                keep.append(item)
        self.pending_replies = keep


class ServiceHandle:
    def __init__(self, endpoint: _ServiceEndpoint):
        self._endpoint = endpoint

    @property
    def service_name(self) -> str:
        return self._endpoint.descriptor.service_name


# --------------------------------------------------------------------------
# participant
# --------------------------------------------------------------------------


class Participant:
    def __init__(self, domain: "Domain", participant_id: int, name: str, transport):
        self.domain = domain
        self.participant_id = participant_id
        self.name = name
        self.transport = transport
        self.alive = True
        self._next_entity = 1
        self.publishers: dict[int, Publisher] = {}
        self.subscribers: dict[int, Subscriber] = {}
        self.services: dict[int, _ServiceEndpoint] = {}
        self._db = _DiscoveryDb(participant_id)
        self._inbox: deque[bytes] = deque()
        self._pending_calls: dict[int, list] = {}
        self._next_request_id = 1
        self._next_hb_ns = domain.now_ns()  # first heartbeat due immediately
        self._bus: _LoopbackBus | None = None
        self._lock = domain._lock  # one reentrant lock orders all control paths

    # -- lifecycle ---------------------------------------------------------

    def close(self, graceful: bool = True) -> None:
        """Leave the domain. A graceful close withdraws records immediately;
        otherwise peers expire them after the liveliness window."""
        with self._lock:
            if not self.alive:
                return
            if graceful:
                self._broadcast_control(MsgType.ANNOUNCE, {"kind": "leave"})
                if self._bus is None:
                    self.domain._detach_inproc_endpoints(self)
            self.alive = False

    def _require_alive(self) -> None:
        if not self.alive:
            raise ParticipantClosed(f"participant {self.name!r} is closed")

    # -- endpoint creation ---------------------------------------------------

    def _check_known_topic(self, desc: TopicDescriptor) -> None:
        for key, info in self._db.records.items():
            if key[0] in ("publisher", "subscriber") and info["topic"] == desc.name:
                if info["type_hash"] != desc.type_hash:
                    raise TypeHashMismatch(
                        f"topic {desc.name!r} is announced with type_hash "
                        f"{info['type_hash']:#x}, got {desc.type_hash:#x}"
                    )

    def create_publisher(self, topic: TopicDescriptor) -> Publisher:
        with self._lock:
            self._require_alive()
            if self._bus is None:
                state = self.domain._inproc.topic_state(topic)
                pub = Publisher(self, topic, self._alloc_entity(), state.arena)
                state.publishers.append(pub)
                self.domain._rematch_inproc(state)
            else:
                self._check_known_topic(topic)
                pub = Publisher(self, topic, self._alloc_entity(), None)
            self.publishers[pub.entity_id] = pub
            self._announce_publisher(pub)
            return pub

    def create_subscriber(self, topic: TopicDescriptor) -> Subscriber:
        with self._lock:
            self._require_alive()
            if self._bus is None:
                state = self.domain._inproc.topic_state(topic)
                sub = Subscriber(self, topic, self._alloc_entity())
                state.subscribers.append(sub)
                self.domain._rematch_inproc(state, replay_to=sub)
            else:
                self._check_known_topic(topic)
                sub = Subscriber(self, topic, self._alloc_entity())
            self.subscribers[sub.entity_id] = sub
            self._announce_subscriber(sub)
            return sub

    def register_service(self, descriptor: ServiceDescriptor, handler) -> ServiceHandle:
        with self._lock:
            self._require_alive()
            self._prune_db()
            name = descriptor.service_name
            for key in self._db.records:
                if key[0] == "service" and key[2] == name:
                    raise DuplicateService(f"service {name!r} is already registered")
            ep = _ServiceEndpoint(self, descriptor, self._alloc_entity(), handler)
            self.services[ep.entity_id] = ep
            self._announce_service(ep)
            return ServiceHandle(ep)

    def _alloc_entity(self) -> int:
        eid = self._next_entity
        self._next_entity += 1
        return eid

    # -- discovery ------------------------------------------------------------

    def discover(self, filter: str = "all") -> list[DiscoveryRecord]:
        """Snapshot of live records: 'topics', 'services' or 'all'."""
        if filter not in ("topics", "services", "all"):
            raise MiddlewareError(f"bad discover filter {filter!r}")
        self._spin_if_needed()
        with self._lock:
            self._prune_db()
            now = self.domain.now_ns()
            live_ns = self.domain.liveliness_ns
            out: list[DiscoveryRecord] = []
            for key, info in sorted(self._db.records.items(), key=lambda kv: repr(kv[0])):
                kind = key[0]
                if filter == "topics" and kind not in ("publisher", "subscriber"):
                    continue
                if filter == "services" and kind != "service":
                    continue
                pid = key[1]
                deadline = self._db.deadline_for(pid, now, live_ns)
                if kind in ("publisher", "subscriber"):
                    desc = TopicDescriptor(info["topic"], info["type_hash"],
                                           QoSProfile.from_json(info["qos"]))
                elif kind == "service":
                    desc = ServiceDescriptor(key[2], info.get("request_type_hash", 0),
                                             info.get("response_type_hash", 0))
                else:
                    desc = info.get("name", "")
                out.append(DiscoveryRecord(kind, pid, desc, deadline))
            return out

    def _prune_db(self) -> None:
        gone = self._db.prune(self.domain.now_ns(), self.domain.liveliness_ns)
        self._unmatch(gone)

    def _unmatch(self, gone_keys: list[tuple]) -> None:
        for key in gone_keys:
            if key[0] != "publisher":
                continue
            pub_key = (key[1], key[2])
            for sub in self.subscribers.values():
                sub._recv.pop(pub_key, None)

    # -- announcements ---------------------------------------------------------

    def _broadcast_control(self, msg_type: MsgType, payload_obj: dict,
                           entity_id: int = 0, flags: int = 0) -> None:
        if self._bus is not None:
            frame = Frame(msg_type, flags, self.participant_id, entity_id, 0,
                          json.dumps(payload_obj, sort_keys=True).encode())
            self._bus.send(self, encode_frame(frame))
        else:
            for peer in self.domain._inproc.participants:
                if peer is not self and peer.alive:
                    peer._handle_control(msg_type, self.participant_id, entity_id,
                                         payload_obj)

    def _announce_self(self) -> None:
        now = self.domain.now_ns()
        self._db.add(("participant", self.participant_id), {"name": self.name}, now)
        self._broadcast_control(MsgType.ANNOUNCE, {"kind": "participant", "name": self.name})

    def _announce_publisher(self, pub: Publisher) -> None:
        now = self.domain.now_ns()
        info = {
            "kind": "publisher",
            "topic": pub.topic.name,
            "type_hash": pub.topic.type_hash,
            "qos": pub.topic.qos.to_json(),
            "next_seq": pub.next_seq,
            "retained_first": pub.retained_first_seq(),
        }
        self._db.add(("publisher", self.participant_id, pub.entity_id), info, now)
        self._broadcast_control(MsgType.ANNOUNCE, info, entity_id=pub.entity_id,
                                flags=_qos_flags(pub.topic.qos))

    def _announce_subscriber(self, sub: Subscriber) -> None:
        now = self.domain.now_ns()
        info = {
            "kind": "subscriber",
            "topic": sub.topic.name,
            "type_hash": sub.topic.type_hash,
            "qos": sub.topic.qos.to_json(),
        }
        self._db.add(("subscriber", self.participant_id, sub.entity_id), info, now)
        self._broadcast_control(MsgType.SUBSCRIBE, info, entity_id=sub.entity_id)

    def _announce_service(self, ep: _ServiceEndpoint) -> None:
        now = self.domain.now_ns()
        info = {
            "kind": "service",
            "name": ep.descriptor.service_name,
            "request_type_hash": ep.descriptor.request_type_hash,
            "response_type_hash": ep.descriptor.response_type_hash,
            "entity_id": ep.entity_id,
        }
        self._db.add(("service", self.participant_id, ep.descriptor.service_name), info, now)
        self._broadcast_control(MsgType.ANNOUNCE, info, entity_id=ep.entity_id)

    # -- publishing -------------------------------------------------------------

    def _publish(self, pub: Publisher, payload: bytes) -> int:
        if not isinstance(payload, (bytes, bytearray, memoryview)):
            raise MiddlewareError("payload must be bytes-like")
        if not isinstance(payload, bytes):
            payload = bytes(payload)
        seq = pub.next_seq
        if pub._arena is not None:
            handle = pub._arena.acquire(payload)  # raises PayloadTooLarge
            sample = Sample(pub.topic.name, seq, pub.publisher_id,
                            self.domain.now_ns(), handle)
            if pub._retains:
                pub._retain(seq, handle)
            copy_mode = self.domain.copying_delivery
            for sub in pub._matched_subs:
                if copy_mode:
                    # measurement baseline: behave like a serializing transport
                    data = memoryview(payload).tobytes()
                    out = Sample(pub.topic.name, seq, pub.publisher_id,
                                 sample.timestamp_ns, BufferHandle(data))
                    sub._enqueue(out)
                else:
                    pub._arena.retain(handle.slot)
                    sub._enqueue(sample)
            handle.release()
        else:
            if len(payload) > MAX_WIRE_PAYLOAD:
                raise PayloadTooLarge("payload exceeds the u32 wire length field")
            if pub._retains:
                pub._retain(seq, payload)
            frame = Frame(MsgType.DATA, _qos_flags(pub.topic.qos),
                          self.participant_id, pub.entity_id, seq, payload)
            self._bus.send(self, encode_frame(frame))
        pub.next_seq = seq + 1
        pub.published_count += 1
        return seq

    def _resend(self, pub: Publisher, seqs: list[int]) -> None:
        retained = dict(pub._retained)
        missing_evicted = False
        for seq in seqs:
            payload = retained.get(seq)
            if payload is None:
                missing_evicted = True
                continue
            frame = Frame(MsgType.DATA, _qos_flags(pub.topic.qos),
                          self.participant_id, pub.entity_id, seq, payload)
            self._bus.send(self, encode_frame(frame))
        if missing_evicted:
            # retention window moved past the request; tell readers to skip ahead
            self._broadcast_control(
                MsgType.ANNOUNCE,
                {"kind": "gap", "topic": pub.topic.name,
                 "first_available": pub.retained_first_seq()},
                entity_id=pub.entity_id,
            )

    def _replay_retained(self, pub: Publisher) -> None:
        for seq, payload in list(pub._retained):
            frame = Frame(MsgType.DATA, _qos_flags(pub.topic.qos),
                          self.participant_id, pub.entity_id, seq, payload)
            self._bus.send(self, encode_frame(frame))

    # -- client/server ------------------------------------------------------------

    def call(self, service_name: str, request: bytes, timeout_ms: int = 1000) -> bytes:
        self._require_alive()
        self.domain.spin()
        with self._lock:
            self._prune_db()
            target = None
            for key, info in self._db.records.items():
                if key[0] == "service" and key[2] == service_name:
                    target = (key[1], info.get("entity_id", 0))
                    break
            if target is None:
                raise ServiceNotFound(f"no live provider for service {service_name!r}")
            request_id = self._next_request_id
            self._next_request_id += 1
            slot: list = []
            self._pending_calls[request_id] = slot
        try:
            self._send_request(target, service_name, request_id, request)
            deadline = self.domain.now_ns() + timeout_ms * MS
            while True:
                self.domain.spin()
                if slot:
                    status, body, code = slot[0]
                    if status == 0:
                        return body
                    raise RemoteError(code, body.decode(errors="replace"))
                now = self.domain.now_ns()
                if now >= deadline:
                    raise Timeout(f"no response from {service_name!r} within {timeout_ms} ms")
                self.domain._wait_quantum(deadline - now)
        finally:
            with self._lock:
                self._pending_calls.pop(request_id, None)

    def _send_request(self, target: tuple[int, int], service_name: str,
                      request_id: int, request: bytes) -> None:
        if self._bus is not None:
            name_b = service_name.encode()
            payload = len(name_b).to_bytes(2, "big") + name_b + request
            frame = Frame(MsgType.REQUEST, 0, self.participant_id, 0, request_id, payload)
            self._bus.send(self, encode_frame(frame))
        else:
            peer = self.domain._participants_by_id.get(target[0])
            if peer is None or not peer.alive:
                raise ServiceNotFound(f"provider of {service_name!r} is gone")
            ep = peer.services.get(target[1])
            if ep is None:
                raise ServiceNotFound(f"provider of {service_name!r} is gone")
            ep.handle(self.participant_id, request_id, request, self.domain.now_ns())

    def _send_response(self, caller_pid: int, request_id: int, status: int,
                       body: bytes, code: int) -> None:
        if self._bus is not None:
            payload = caller_pid.to_bytes(8, "big") + bytes([status])
            if status == 0:
                payload += body
            else:
                payload += code.to_bytes(4, "big") + body
            frame = Frame(MsgType.RESPONSE, 0, self.participant_id, 0, request_id, payload)
            self._bus.send(self, encode_frame(frame))
        else:
            peer = self.domain._participants_by_id.get(caller_pid)
            if peer is not None and peer.alive:
                peer._complete_call(request_id, status, body, code)

    def _complete_call(self, request_id: int, status: int, body: bytes, code: int) -> None:
        with self._lock:
            slot = self._pending_calls.get(request_id)
            if slot is not None and not slot:
                slot.append((status, body, code))
            # a late response finds no pending entry and is discarded

    # -- spin: frames, heartbeats, liveliness, nacks ----------------------------

    def _spin_if_needed(self) -> None:
        # cheap gate: skip the full spin when nothing can have progressed
        if not self.alive:
            return
        if (self._inbox or not self.domain.clock.is_manual
                or self.domain.now_ns() >= self._next_hb_ns):
            self.spin()

    def spin(self) -> None:
        """Process queued frames and run periodic protocol duties."""
        with self._lock:
            if not self.alive:
                return
            while self._inbox:
                raw = self._inbox.popleft()
                try:
                    frame = decode_frame(raw)
                except FrameError:
                    continue  # a corrupt frame is dropped, not fatal
                self._handle_frame(frame)
            now = self.domain.now_ns()
            if now >= self._next_hb_ns:
                self._heartbeat(now)
                self._next_hb_ns = now + self.domain.heartbeat_period_ns
            self._prune_db()
            for ep in self.services.values():
                ep.flush(now)
            for sub in self.subscribers.values():
                self._send_nacks(sub, now)
                sub._check_deadline(now)

    def _heartbeat(self, now: int) -> None:
        self._db.heartbeat(self.participant_id, now)
        self._broadcast_control(MsgType.HEARTBEAT,
                                {"kind": "heartbeat", "name": self.name})
        if self._bus is not None:
            # frames may have been lost: periodically restate what we offer,
            # and re-court publishers for topics still without a source
            for pub in self.publishers.values():
                self._announce_publisher(pub)
            for ep in self.services.values():
                self._announce_service(ep)
            for sub in self.subscribers.values():
                if not sub._recv:
                    self._announce_subscriber(sub)

    def _send_nacks(self, sub: Subscriber, now: int) -> None:
        if self._bus is None:
            return
        for (pid, eid), state in sub._recv.items():
            if not state.reliable_path:
                continue
            if not state.pending and state.high_water <= state.expected:
                continue
            if now - state.last_nack_ns < NACK_INTERVAL_NS:
                continue
            limit = max(state.high_water, max(state.pending) + 1 if state.pending else 0)
            missing = [s for s in range(state.expected, limit) if s not in state.pending]
            if not missing:
                continue
            state.last_nack_ns = now
            payload = json.dumps({
                "target_pid": pid, "target_eid": eid,
                "topic": state.topic, "missing": missing[:64],
            }, sort_keys=True).encode()
            frame = Frame(MsgType.NACK, 0, self.participant_id, sub.entity_id, 0, payload)
            self._bus.send(self, encode_frame(frame))

    # -- frame handling (loopback receive path) ---------------------------------

    def _handle_frame(self, frame: Frame) -> None:
        mt = frame.msg_type
        if mt == MsgType.DATA:
            self._handle_data(frame)
        elif mt in (MsgType.ANNOUNCE, MsgType.SUBSCRIBE, MsgType.HEARTBEAT):
            try:
                obj = json.loads(frame.payload.decode())
            except (UnicodeDecodeError, json.JSONDecodeError):
                return
            self._handle_control(mt, frame.participant_id, frame.entity_id, obj)
        elif mt == MsgType.REQUEST:
            if len(frame.payload) < 2:
                return
            name_len = int.from_bytes(frame.payload[:2], "big")
            name = frame.payload[2:2 + name_len].decode(errors="replace")
            request = frame.payload[2 + name_len:]
            for ep in self.services.values():
                if ep.descriptor.service_name == name:
                    ep.handle(frame.participant_id, frame.seq, request,
                              self.domain.now_ns())
                    break
        elif mt == MsgType.RESPONSE:
            if len(frame.payload) < 9:
                return
            caller_pid = int.from_bytes(frame.payload[:8], "big")
            if caller_pid != self.participant_id:
                return
            status = frame.payload[8]
            if status == 0:
                self._complete_call(frame.seq, 0, frame.payload[9:], 0)
            else:
                code = int.from_bytes(frame.payload[9:13], "big")
                self._complete_call(frame.seq, 1, frame.payload[13:], code)
        elif mt == MsgType.NACK:
            try:
                obj = json.loads(frame.payload.decode())
            except (UnicodeDecodeError, json.JSONDecodeError):
                return
            if obj.get("target_pid") != self.participant_id:
                return
            pub = self.publishers.get(obj.get("target_eid"))
            if pub is not None:
                self._resend(pub, [int(s) for s in obj.get("missing", [])])

    def _handle_control(self, mt: MsgType, pid: int, eid: int, obj: dict) -> None:
        now = self.domain.now_ns()
        kind = obj.get("kind")
        self._db.heartbeat(pid, now)
        if mt == MsgType.HEARTBEAT:
            # liveliness assertions double as identity for late joiners
            self._db.add(("participant", pid), {"name": obj.get("name", "")}, now)
            return
        if kind == "participant":
            self._db.add(("participant", pid), {"name": obj.get("name", "")}, now)
        elif kind == "publisher":
            self._db.add(("publisher", pid, eid), obj, now)
            self._match_remote_publisher(pid, eid, obj)
        elif kind == "subscriber":
            self._db.add(("subscriber", pid, eid), obj, now)
            self._court_remote_subscriber(obj)
        elif kind == "service":
            self._db.add(("service", pid, obj.get("name", "")), obj, now)
        elif kind == "leave":
            gone = self._db.remove_participant(pid)
            self._unmatch(gone)
        elif kind == "gap":
            self._apply_gap(pid, eid, obj)

    def _match_remote_publisher(self, pid: int, eid: int, info: dict) -> None:
        if self._bus is None:
            return  # in-process matching is owned by the plane
        pub_qos = QoSProfile.from_json(info["qos"])
        key = (pid, eid)
        for sub in self.subscribers.values():
            if sub.topic.name != info["topic"]:
                continue
            if sub.topic.type_hash != info["type_hash"]:
                continue
            if not qos_compatible(pub_qos, sub.topic.qos):
                continue
            state = sub._recv.get(key)
            if state is not None:
                state.high_water = max(state.high_water, info["next_seq"])
                continue
            wants_replay = (sub.topic.qos.durability == Durability.TRANSIENT_LOCAL
                            and pub_qos.durability == Durability.TRANSIENT_LOCAL)
            expected = info["retained_first"] if wants_replay else info["next_seq"]
            reliable_path = (pub_qos.reliability == Reliability.RELIABLE
                             and sub.topic.qos.reliability == Reliability.RELIABLE)
            sub._recv[key] = _RecvState(info["topic"], expected, reliable_path,
                                        _qos_flags(pub_qos), info["next_seq"])

    def _court_remote_subscriber(self, info: dict) -> None:
        if self._bus is None:
            return  # in-process matching is owned by the plane
        for pub in self.publishers.values():
            if pub.topic.name != info["topic"]:
                continue
            if pub.topic.type_hash != info["type_hash"]:
                continue
            sub_qos = QoSProfile.from_json(info["qos"])
            if not qos_compatible(pub.topic.qos, sub_qos):
                continue
            self._announce_publisher(pub)
            if (pub.topic.qos.durability == Durability.TRANSIENT_LOCAL
                    and sub_qos.durability == Durability.TRANSIENT_LOCAL):
                self._replay_retained(pub)

    def _apply_gap(self, pid: int, eid: int, obj: dict) -> None:
        key = (pid, eid)
        first = int(obj.get("first_available", 0))
        for sub in self.subscribers.values():
            state = sub._recv.get(key)
            if state is None or first <= state.expected:
                continue
            sub.drops_gap += first - state.expected
            state.expected = first
            self._drain_pending(sub, key, state)

    def _handle_data(self, frame: Frame) -> None:
        key = (frame.participant_id, frame.entity_id)
        for sub in self.subscribers.values():
            state = sub._recv.get(key)
            if state is None:
                continue
            seq = frame.seq
            if seq >= state.high_water:
                state.high_water = seq + 1
            if seq < state.expected or seq in state.pending:
                continue  # duplicate or already-superseded sample
            if state.reliable_path:
                if seq == state.expected:
                    self._deliver_wire(sub, state, key, seq, frame.payload)
                    state.expected = seq + 1
                    self._drain_pending(sub, key, state)
                else:
                    state.pending[seq] = frame.payload
            else:
                sub.drops_gap += seq - state.expected
                self._deliver_wire(sub, state, key, seq, frame.payload)
                state.expected = seq + 1

    def _drain_pending(self, sub: Subscriber, key: tuple[int, int],
                       state: _RecvState) -> None:
        while state.expected in state.pending:
            payload = state.pending.pop(state.expected)
            self._deliver_wire(sub, state, key, state.expected, payload)
            state.expected += 1
        if state.pending and min(state.pending) < state.expected:
            for stale in [s for s in state.pending if s < state.expected]:
                del state.pending[stale]

    def _deliver_wire(self, sub: Subscriber, state: _RecvState, key: tuple[int, int],
                      seq: int, payload: bytes) -> None:
        sample = Sample(state.topic, seq, _publisher_id(*key),
                        self.domain.now_ns(), BufferHandle(payload))
        sub._enqueue(sample)


def _qos_flags(qos: QoSProfile) -> int:
    flags = 0
    if qos.reliability == Reliability.RELIABLE:
        flags |= FLAG_RELIABLE
    if qos.durability == Durability.TRANSIENT_LOCAL:
        flags |= FLAG_TRANSIENT_LOCAL
    return flags


# --------------------------------------------------------------------------
# domain
# --------------------------------------------------------------------------


class Domain:
    """A communication universe: clock, in-process plane, loopback buses."""

    def __init__(self, clock=None, arena_slot_size: int = DEFAULT_SLOT_SIZE,
                 arena_slot_count: int = DEFAULT_SLOT_COUNT,
                 heartbeat_period_ns: int = HEARTBEAT_PERIOD_NS,
                 auto_advance: bool = True):
        self.clock = clock if clock is not None else ManualClock()
        self.arena_slot_size = arena_slot_size
        self.arena_slot_count = arena_slot_count
        self.heartbeat_period_ns = heartbeat_period_ns
        self.liveliness_ns = LIVELINESS_PERIODS * heartbeat_period_ns
        self.auto_advance = auto_advance
        self.copying_delivery = False  # bench baseline only; copies payloads
        self._inproc = _InProcPlane(self)
        self._buses: dict[int, _LoopbackBus] = {}
        self._loss_config: dict[int, LossModel] = {}
        self._participants: list[Participant] = []
        self._participants_by_id: dict[int, Participant] = {}
        self._next_pid = 1
        self._lock = threading.RLock()

    def now_ns(self) -> int:
        return self.clock.now_ns()

    def set_loss(self, port: int, drop_probability: float, seed: int = 0) -> None:
        """Configure the seeded loss model of a loopback port (before use)."""
        with self._lock:
            if port in self._buses:
                raise MiddlewareError(f"port {port} already has participants")
            self._loss_config[port] = LossModel(drop_probability, seed)

    def create_participant(self, name: str, transport=InProcess()) -> Participant:
        if not name:
            raise MiddlewareError("participant name must be non-empty")
        with self._lock:
            pid = self._next_pid
            self._next_pid += 1
            p = Participant(self, pid, name, transport)
            if isinstance(transport, InProcess):
                self._inproc.participants.append(p)
                # synchronous plane: existing records are visible immediately
                for peer in self._inproc.participants:
                    if peer is p or not peer.alive:
                        continue
                    now = self.now_ns()
                    for key, info in peer._db.records.items():
                        if key[1] == peer.participant_id:
                            p._db.add(key, info, now)
            elif isinstance(transport, Loopback):
                if not 1 <= transport.port <= 65535:
                    raise TransportUnavailable(f"cannot bind loopback port {transport.port}")
                bus = self._buses.get(transport.port)
                if bus is None:
                    bus = _LoopbackBus(transport.port, self._loss_config.get(transport.port))
                    self._buses[transport.port] = bus
                bus.endpoints.append(p)
                p._bus = bus
            else:
                raise TransportUnavailable(f"unknown transport {transport!r}")
            self._participants.append(p)
            self._participants_by_id[pid] = p
            p._announce_self()
            return p

    def bus(self, port: int) -> _LoopbackBus:
        return self._buses[port]

    def spin(self) -> None:
        """One deterministic progress round across all participants."""
        with self._lock:
            for p in list(self._participants):
                p.spin()

    def advance(self, ns: int, quantum_ns: int | None = None) -> None:
        """Step the manual clock by ``ns``, spinning at each quantum."""
        if not self.clock.is_manual:
            raise MiddlewareError("advance() requires a manual clock")
        quantum = quantum_ns or self.heartbeat_period_ns
        remaining = ns
        while remaining > 0:
            step = min(quantum, remaining)
            self.clock.advance(step)
            remaining -= step
            self.spin()

    def _wait_quantum(self, remaining_ns: int) -> None:
        if self.clock.is_manual:
            if not self.auto_advance:
                raise Timeout("manual clock is not advancing and auto_advance is off")
            self.clock.advance(min(CALL_QUANTUM_NS, remaining_ns))
        else:
            time.sleep(0.0005)

    def _rematch_inproc(self, state: _InProcTopic, replay_to: Subscriber | None = None) -> None:
        for pub in state.publishers:
            matched = tuple(
                sub for sub in state.subscribers
                if sub.topic.type_hash == pub.topic.type_hash
                and qos_compatible(pub.topic.qos, sub.topic.qos)
                and sub.participant.alive
            )
            newly = replay_to is not None and replay_to in matched and replay_to not in pub._matched_subs
            pub._matched_subs = matched
            if (newly and pub.topic.qos.durability == Durability.TRANSIENT_LOCAL
                    and replay_to.topic.qos.durability == Durability.TRANSIENT_LOCAL):
                for seq, handle in list(pub._retained):
                    pub._arena.retain(handle.slot)
                    replay_to._enqueue(Sample(pub.topic.name, seq, pub.publisher_id,
                                              self.now_ns(), handle))

    def _detach_inproc_endpoints(self, p: Participant) -> None:
        for state in self._inproc.topics.values():
            state.publishers = [pub for pub in state.publishers if pub.participant is not p]
            state.subscribers = [sub for sub in state.subscribers if sub.participant is not p]
            self._rematch_inproc(state)
