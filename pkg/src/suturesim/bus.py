"""Typed in-process pub/sub topics and request/response services on a
deterministic logical clock.

Single-threaded simulation analogue of a middleware node graph: the
caller that drives the clock owns all bus and device state. Latencies are
injected per channel, service endpoints carry a connectivity flag for
fault scenarios, and every envelope is appended to a replayable event
log. Events scheduled at equal times dispatch in sequence order, so runs
are reproducible bit for bit.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import ConnectionLostError, InvalidArgumentError, NoEndpointError
from .serialization import to_jsonable, trace_hash


@dataclass
class ServiceEndpoint:
    name: str
    handler: Callable[[Any], Any]
    latency_ms: float
    connected: bool = True


@dataclass
class _Subscription:
    topic: str
    callback: Callable[[dict], None]
    connected: bool = True


@dataclass(order=True)
class _Event:
    time_ms: float
    seq: int
    action: Callable[[], None] = field(compare=False)


class SimClock:
    """Monotonic logical clock with a (time, seq)-ordered pending queue."""

    def __init__(self):
        self.now_ms = 0.0
        self._queue: list[_Event] = []

    def push(self, event: _Event) -> None:
        if event.time_ms < self.now_ms:
            raise InvalidArgumentError("cannot schedule an event in the past")
        heapq.heappush(self._queue, event)

    def pop_due(self, until_ms: float) -> _Event | None:
        if self._queue and self._queue[0].time_ms <= until_ms:
            return heapq.heappop(self._queue)
        return None

    def peek_time(self) -> float | None:
        return self._queue[0].time_ms if self._queue else None

    def pending(self) -> int:
        return len(self._queue)


class SimBus:
    """Single-owner event bus: services, topics, scheduled events, log."""

    def __init__(self, topic_latency_ms: float = 1.0, service_latency_ms: float = 2.0):
        self.clock = SimClock()
        self.topic_latency_ms = float(topic_latency_ms)
        self.service_latency_ms = float(service_latency_ms)
        self._seq = 0
        self._services: dict[str, ServiceEndpoint] = {}
        self._subscriptions: dict[str, list[_Subscription]] = {}
        self.log: list[dict] = []
        self.on_advance: Callable[[float], None] | None = None

    # -- sequencing and logging -------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def record(self, channel: str, kind: str, payload: Any) -> dict:
        entry = {
            "seq": self._next_seq(),
            "t": self.clock.now_ms,
            "channel": channel,
            "kind": kind,
            "payload": to_jsonable(payload),
        }
        self.log.append(entry)
        return entry

    def log_hash(self) -> str:
        return trace_hash(self.log)

    # -- clock driving -----------------------------------------------------

    def step(self, until_ms: float) -> int:
        """Dispatch every event due at or before until_ms; advance the clock."""
        if until_ms < self.clock.now_ms:
            raise InvalidArgumentError("clock cannot move backwards")
        dispatched = 0
        while True:
            event = self.clock.pop_due(until_ms)
            if event is None:
                break
            previous = self.clock.now_ms
            self.clock.now_ms = max(previous, event.time_ms)
            if self.on_advance and self.clock.now_ms > previous:
                self.on_advance(self.clock.now_ms - previous)
            event.action()
            dispatched += 1
        previous = self.clock.now_ms
        self.clock.now_ms = until_ms
        if self.on_advance and until_ms > previous:
            self.on_advance(until_ms - previous)
        return dispatched

    def advance(self, duration_ms: float) -> int:
        if duration_ms < 0:
            raise InvalidArgumentError("duration must be >= 0")
        return self.step(self.clock.now_ms + duration_ms)

    def schedule(self, at_ms: float, action: Callable[[], None]) -> None:
        self.clock.push(_Event(time_ms=at_ms, seq=self._next_seq(), action=action))

    def run_until_idle(self, limit_ms: float | None = None) -> int:
        """Dispatch all pending events (bounded by limit_ms when given)."""
        dispatched = 0
        while True:
            t = self.clock.peek_time()
            if t is None or (limit_ms is not None and t > limit_ms):
                break
            dispatched += self.step(t)
        return dispatched

    # -- services ----------------------------------------------------------

    def register_service(
        self, name: str, handler: Callable[[Any], Any], latency_ms: float | None = None
    ) -> ServiceEndpoint:
        if name in self._services:
            raise InvalidArgumentError(f"service {name!r} already registered")
        endpoint = ServiceEndpoint(
            name=name,
            handler=handler,
            latency_ms=self.service_latency_ms if latency_ms is None else float(latency_ms),
        )
        self._services[name] = endpoint
        return endpoint

    def endpoint(self, name: str) -> ServiceEndpoint:
        try:
            return self._services[name]
        except KeyError:
            raise NoEndpointError(f"no service registered under {name!r}") from None

    def call(self, name: str, request: Any) -> Any:
        """Request/response round trip, advancing the clock by both latencies.

        The request is delivered after the endpoint's latency, the handler
        runs at that logical time, and the response arrives after the
        return latency. Scheduled events that fall inside the window (for
        example connection faults) dispatch first, so a fault can reject
        the delivery.
        """
        endpoint = self.endpoint(name)
        self.record(name, "request", request)
        self.advance(endpoint.latency_ms)
        if not endpoint.connected:
            self.record(name, "connection-lost", {"request": request})
            raise ConnectionLostError(f"service {name!r} is disconnected")
        self.record(name, "handle", None)
        response = endpoint.handler(request)
        self.advance(endpoint.latency_ms)
        self.record(name, "response", response)
        return response

    # -- topics --------------------------------------------------------------

    def subscribe(self, topic: str, callback: Callable[[dict], None]) -> _Subscription:
        sub = _Subscription(topic=topic, callback=callback)
        self._subscriptions.setdefault(topic, []).append(sub)
        return sub

    def publish(self, topic: str, payload: Any) -> None:
        """Fan a payload out to every subscriber connected at publish time.

        Deliveries are scheduled after the topic latency in registration
        order and each connected-at-publish subscriber receives the
        envelope exactly once.
        """
        entry = self.record(topic, "publish", payload)
        recipients = [s for s in self._subscriptions.get(topic, []) if s.connected]
        for sub in recipients:
            def deliver(sub=sub, payload=payload, publish_seq=entry["seq"]):
                self.record(topic, "deliver", {"publish_seq": publish_seq})
                sub.callback({"topic": topic, "payload": payload,
                              "t": self.clock.now_ms, "publish_seq": publish_seq})
            self.schedule(self.clock.now_ms + self.topic_latency_ms, deliver)
