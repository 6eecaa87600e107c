"""Transport-agnostic topic registry with retention and fan-out.

Both broker frontends (the HTTP/3-flavored one and the MQTT baseline)
share this registry, so topic semantics cannot drift between them.

Delivery model: each subscriber owns a bounded queue.  publish() appends
the event to every live queue synchronously, which is what makes seq
order per subscriber trivial.  A subscriber whose queue is full is
force-closed instead of back-pressuring the publisher: publisher
progress is the quantity we measure, a stalled reader must not distort
it.
"""

from __future__ import annotations

import asyncio
import enum
import itertools
import re
import time
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass, field

TOPIC_NAME_RE = re.compile(r"^[A-Za-z0-9_-]{1,255}$")

DEFAULT_RETAIN_DEPTH = 1
DEFAULT_MAX_PAYLOAD = 65536
DEFAULT_SUBSCRIBER_QUEUE = 64


class InvalidName(ValueError):
    """Topic name outside [A-Za-z0-9_-]{1,255}."""


class TopicNotFound(KeyError):
    pass


class PayloadTooLarge(ValueError):
    pass


class CreateResult(enum.Enum):
    CREATED = "created"
    ALREADY_EXISTS = "already_exists"


class DeleteResult(enum.Enum):
    DELETED = "deleted"
    NOT_FOUND = "not_found"


class CloseReason(enum.Enum):
    UNSUBSCRIBED = "unsubscribed"
    TOPIC_DELETED = "topic_deleted"
    OVERFLOW = "overflow"


def validate_topic_name(name: str) -> str:
    if not TOPIC_NAME_RE.match(name):
        raise InvalidName(f"bad topic name: {name!r}")
    return name


@dataclass(frozen=True)
class Event:
    topic: str
    payload: bytes
    seq: int
    published_at_ms: float


class Subscription:
    """One subscriber's ordered event queue.

    Async-iterable; iteration ends once the subscription is closed and
    the queue drained.  close_reason says why (unsubscribe, topic
    deletion, or overflow force-close).
    """

    def __init__(self, sub_id: int, topic: str, maxsize: int) -> None:
        self.id = sub_id
        self.topic = topic
        self._maxsize = maxsize
        self._queue: deque[Event] = deque()
        self._wakeup: asyncio.Event | None = None
        self.closed = False
        self.close_reason: CloseReason | None = None

    def _offer(self, event: Event) -> bool:
        if self.closed:
            return False
        if len(self._queue) >= self._maxsize:
            return False
        self._queue.append(event)
        self._notify()
        return True

    def _close(self, reason: CloseReason) -> None:
        if not self.closed:
            self.closed = True
            self.close_reason = reason
            self._notify()

    def _notify(self) -> None:
        if self._wakeup is not None:
            self._wakeup.set()

    def pending(self) -> int:
        return len(self._queue)

    async def next_event(self) -> Event | None:
        """Next event in seq order, or None once closed and drained."""
        while True:
            if self._queue:
                return self._queue.popleft()
            if self.closed:
                return None
            if self._wakeup is None:
                self._wakeup = asyncio.Event()
            self._wakeup.clear()
            await self._wakeup.wait()

    def __aiter__(self) -> Subscription:
        return self

    async def __anext__(self) -> Event:
        event = await self.next_event()
        if event is None:
            raise StopAsyncIteration
        return event


@dataclass
class _Topic:
    name: str
    retained: deque[Event]
    subscribers: dict[int, Subscription] = field(default_factory=dict)
    next_seq: int = 1


class TopicRegistry:
    """Named channels with bounded retention and subscriber fan-out.

    Single event loop assumed: every public method runs atomically with
    respect to the others, which serializes seq assignment and fan-out
    per topic.
    """

    def __init__(self, retain_depth: int = DEFAULT_RETAIN_DEPTH,
                 max_payload: int = DEFAULT_MAX_PAYLOAD,
                 subscriber_queue: int = DEFAULT_SUBSCRIBER_QUEUE,
                 clock_ms: Callable[[], float] | None = None) -> None:
        if retain_depth < 0:
            raise ValueError("retain_depth must be >= 0")
        self._topics: dict[str, _Topic] = {}
        self._retain_depth = retain_depth
        self._max_payload = max_payload
        self._subscriber_queue = subscriber_queue
        self._clock_ms = clock_ms
        self._ids = itertools.count(1)
        self.overflow_closes = 0

    def _now_ms(self) -> float:
        if self._clock_ms is not None:
            return self._clock_ms()
        try:
            return asyncio.get_running_loop().time() * 1000.0
        except RuntimeError:
            return time.monotonic() * 1000.0

    def create_topic(self, name: str) -> CreateResult:
        validate_topic_name(name)
        if name in self._topics:
            return CreateResult.ALREADY_EXISTS
        self._topics[name] = _Topic(name=name,
                                    retained=deque(maxlen=self._retain_depth))
        return CreateResult.CREATED

    def topic_exists(self, name: str) -> bool:
        return name in self._topics

    def delete_topic(self, name: str) -> DeleteResult:
        topic = self._topics.pop(name, None)
        if topic is None:
            return DeleteResult.NOT_FOUND
        for sub in list(topic.subscribers.values()):
            sub._close(CloseReason.TOPIC_DELETED)
        topic.subscribers.clear()
        topic.retained.clear()
        return DeleteResult.DELETED

    def publish(self, name: str, payload: bytes) -> int:
        topic = self._topics.get(name)
        if topic is None:
            raise TopicNotFound(name)
        if len(payload) > self._max_payload:
            raise PayloadTooLarge(f"{len(payload)} > {self._max_payload}")
        event = Event(topic=name, payload=bytes(payload), seq=topic.next_seq,
                      published_at_ms=self._now_ms())
        topic.next_seq += 1
        topic.retained.append(event)
        for sub_id, sub in list(topic.subscribers.items()):
            if not sub._offer(event):
                sub._close(CloseReason.OVERFLOW)
                topic.subscribers.pop(sub_id, None)
                self.overflow_closes += 1
        return event.seq

    def subscribe(self, name: str) -> Subscription:
        topic = self._topics.get(name)
        if topic is None:
            raise TopicNotFound(name)
        sub = Subscription(next(self._ids), name,
                           maxsize=self._subscriber_queue)
        # Retained replay precedes registration so a concurrent publish
        # cannot be observed before older retained events.
        for event in topic.retained:
            sub._offer(event)
        topic.subscribers[sub.id] = sub
        return sub

    def unsubscribe(self, sub: Subscription) -> bool:
        topic = self._topics.get(sub.topic)
        known = topic is not None and topic.subscribers.pop(sub.id, None) is not None
        if known:
            sub._close(CloseReason.UNSUBSCRIBED)
        return known

    def subscriber_count(self, name: str) -> int:
        topic = self._topics.get(name)
        return len(topic.subscribers) if topic else 0

    def retained_events(self, name: str) -> tuple[Event, ...]:
        topic = self._topics.get(name)
        if topic is None:
            raise TopicNotFound(name)
        return tuple(topic.retained)

    def topic_names(self) -> tuple[str, ...]:
        return tuple(self._topics)
