"""Client for external scorer processes speaking the line protocol.

One request per line, one response per line, UTF-8 JSON objects::

    -> {"id": "r1", "caption": "a black dog"}
    <- {"id": "r1", "score": 0.97}          or  {"id": "r1", "error": "..."}

Responses are correlated by id, never by order, so scorers may batch
internally and answer out of order. Endpoints are designated as
``cmd:<argv>`` (spawn a child process and talk over its standard streams)
or ``tcp:<host>:<port>`` (a single TCP connection).
"""

from __future__ import annotations

import hashlib
import json
import queue
import shlex
import socket
import subprocess
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Protocol

from .corpus import CaptionRecord, ReadStats


class GatewayError(Exception):
    """Base class for scorer-gateway failures."""


class EndpointError(GatewayError):
    """The scorer endpoint could not be reached or died mid-batch."""


class ProtocolError(GatewayError):
    """The scorer sent something outside the line-protocol grammar."""


@dataclass(frozen=True)
class ScoreRequest:
    id: str
    caption: str

    def validate(self) -> None:
        if not self.id:
            raise ValueError("request id must be non-empty")

    def to_line(self) -> str:
        return json.dumps({"id": self.id, "caption": self.caption}, ensure_ascii=False)


@dataclass(frozen=True)
class ScoreResponse:
    id: str
    score: float | None = None
    error: str | None = None

    def validate(self) -> None:
        if (self.score is None) == (self.error is None):
            raise ValueError("response must carry exactly one of score/error")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score!r} outside [0, 1]")

    @classmethod
    def from_line(cls, line: str) -> "ScoreResponse":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"unparseable response line: {line!r}") from exc
        if not isinstance(obj, dict) or not isinstance(obj.get("id"), str):
            raise ProtocolError(f"response is not an object with a string id: {line!r}")
        unknown = set(obj) - {"id", "score", "error"}
        if unknown:
            raise ProtocolError(f"unknown response fields {sorted(unknown)}: {line!r}")
        score = obj.get("score")
        error = obj.get("error")
        if score is not None and (not isinstance(score, (int, float)) or isinstance(score, bool)):
            raise ProtocolError(f"score must be a number: {line!r}")
        if error is not None and not isinstance(error, str):
            raise ProtocolError(f"error must be a string: {line!r}")
        response = cls(id=obj["id"], score=float(score) if score is not None else None,
                       error=error)
        try:
            response.validate()
        except ValueError as exc:
            raise ProtocolError(f"{exc}: {line!r}") from exc
        return response


class InProcessScorer(Protocol):
    """Deterministic scorers usable without a wire connection."""

    def score(self, request: ScoreRequest) -> ScoreResponse: ...


def stub_score(caption: str) -> float:
    """Deterministic test score: the first 8 bytes of SHA-256 of the UTF-8
    caption, read big-endian, divided by 2**64. Identical captions always
    map to the identical value in [0, 1)."""
    digest = hashlib.sha256(caption.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


class StubScorer:
    """In-process scorer backed by :func:`stub_score`."""

    def score(self, request: ScoreRequest) -> ScoreResponse:
        return ScoreResponse(id=request.id, score=stub_score(request.caption))


class TableScorer:
    """In-process scorer answering from a fixed id -> score table."""

    def __init__(self, table: dict[str, float]):
        self.table = dict(table)

    def score(self, request: ScoreRequest) -> ScoreResponse:
        if request.id not in self.table:
            return ScoreResponse(id=request.id, error="unknown id")
        return ScoreResponse(id=request.id, score=self.table[request.id])


_EOF = object()


class _LineReader(threading.Thread):
    """Pumps scorer output lines into a queue so reads can time out."""

    def __init__(self, stream):
        super().__init__(daemon=True)
        self._stream = stream
        self.lines: "queue.Queue[object]" = queue.Queue()

    def run(self):
        try:
            for line in self._stream:
                self.lines.put(line)
        except (OSError, ValueError):
            pass
        self.lines.put(_EOF)


class ScorerConnection:
    """One bidirectional line-protocol connection to a scorer process."""

    def __init__(self, writer, reader_stream, proc=None, sock=None):
        self._writer = writer
        self._proc = proc
        self._sock = sock
        self._reader = _LineReader(reader_stream)
        self._reader.start()

    @classmethod
    def open(cls, endpoint: str, connect_timeout: float = 10.0) -> "ScorerConnection":
        if endpoint.startswith("cmd:"):
            argv = shlex.split(endpoint[len("cmd:"):])
            if not argv:
                raise EndpointError("cmd endpoint has no command")
            try:
                proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                        text=True, encoding="utf-8", bufsize=1)
            except OSError as exc:
                raise EndpointError(f"cannot spawn scorer {argv!r}: {exc}") from exc
            return cls(writer=proc.stdin, reader_stream=proc.stdout, proc=proc)
        if endpoint.startswith("tcp:"):
            host, _, port = endpoint[len("tcp:"):].rpartition(":")
            if not host or not port.isdigit():
                raise EndpointError(f"malformed tcp endpoint {endpoint!r}")
            try:
                sock = socket.create_connection((host, int(port)), timeout=connect_timeout)
            except OSError as exc:
                raise EndpointError(f"cannot connect to {endpoint!r}: {exc}") from exc
            sock.settimeout(None)
            reader = sock.makefile("r", encoding="utf-8", newline="\n")
            writer = sock.makefile("w", encoding="utf-8", newline="\n")
            return cls(writer=writer, reader_stream=reader, sock=sock)
        raise EndpointError(f"unknown endpoint designator {endpoint!r} "
                            f"(expected cmd:<argv> or tcp:<host>:<port>)")

    def send(self, request: ScoreRequest) -> None:
        request.validate()
        try:
            self._writer.write(request.to_line())
            self._writer.write("\n")
            self._writer.flush()
        except (OSError, ValueError, BrokenPipeError) as exc:
            raise EndpointError(f"scorer connection lost while sending: {exc}") from exc

    def recv(self, timeout: float) -> str | None:
        """Next response line, ``None`` on timeout; EndpointError at EOF."""
        try:
            item = self._reader.lines.get(timeout=timeout)
        except queue.Empty:
            return None
        if item is _EOF:
            raise EndpointError("scorer closed the connection")
        return str(item).strip()

    def close(self) -> None:
        for closer in (self._writer,):
            try:
                closer.close()
            except Exception:
                pass
        if self._proc is not None:
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def score_batch(requests: list[ScoreRequest],
                endpoint: "str | ScorerConnection | InProcessScorer",
                timeout: float = 30.0, max_in_flight: int = 32) -> list[ScoreResponse]:
    """Score a batch, returning responses aligned with the request order.

    Up to ``max_in_flight`` requests are pipelined on the connection; the
    scorer may answer out of order. Waiting longer than ``timeout`` for the
    next response marks every still-outstanding id with a ``timeout`` error
    instead of aborting the batch.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")
    for request in requests:
        request.validate()

    if hasattr(endpoint, "score"):
        return [endpoint.score(request) for request in requests]

    if isinstance(endpoint, str):
        with ScorerConnection.open(endpoint) as conn:
            return _score_batch_on_connection(conn, requests, timeout, max_in_flight)
    return _score_batch_on_connection(endpoint, requests, timeout, max_in_flight)


def _score_batch_on_connection(conn: ScorerConnection, requests: list[ScoreRequest],
                               timeout: float, max_in_flight: int) -> list[ScoreResponse]:
    results: list[ScoreResponse | None] = [None] * len(requests)
    pending: dict[str, deque[int]] = {}
    next_to_send = 0
    outstanding = 0
    received = 0

    while received < len(requests):
        while next_to_send < len(requests) and outstanding < max_in_flight:
            request = requests[next_to_send]
            conn.send(request)
            pending.setdefault(request.id, deque()).append(next_to_send)
            next_to_send += 1
            outstanding += 1

        line = conn.recv(timeout)
        if line is None:
            for idx_queue in pending.values():
                for idx in idx_queue:
                    results[idx] = ScoreResponse(id=requests[idx].id, error="timeout")
            for idx in range(next_to_send, len(requests)):
                results[idx] = ScoreResponse(id=requests[idx].id, error="timeout")
            break
        if not line:
            continue
        response = ScoreResponse.from_line(line)
        slots = pending.get(response.id)
        if not slots:
            raise ProtocolError(f"response for id {response.id!r} does not match "
                                f"any outstanding request")
        idx = slots.popleft()
        if not slots:
            del pending[response.id]
        results[idx] = response
        outstanding -= 1
        received += 1

    return [r if r is not None else ScoreResponse(id=requests[i].id, error="timeout")
            for i, r in enumerate(results)]


def attach_scores(records: Iterable[CaptionRecord],
                  endpoint: "str | ScorerConnection | InProcessScorer",
                  score_name: str, batch_size: int = 64,
                  failures: str | Path | None = None,
                  stats: ReadStats | None = None,
                  timeout: float = 30.0, max_in_flight: int = 32) -> Iterator[CaptionRecord]:
    """Enrich a record stream with scores from one scorer connection.

    Records whose scoring failed are written to the ``failures`` file (one
    JSON object per line with the id, caption, and error string) and dropped
    from the output stream. Results do not depend on ``batch_size`` or
    ``max_in_flight``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")

    own_connection = isinstance(endpoint, str)
    conn = ScorerConnection.open(endpoint) if own_connection else endpoint
    failure_fh = Path(failures).open("w", encoding="utf-8") if failures is not None else None

    def handle(batch: list[CaptionRecord]) -> Iterator[CaptionRecord]:
        requests = [ScoreRequest(id=record.id, caption=record.caption) for record in batch]
        responses = score_batch(requests, conn, timeout=timeout, max_in_flight=max_in_flight)
        for record, response in zip(batch, responses):
            if response.score is not None:
                if stats is not None:
                    stats.read += 1
                yield record.with_score(score_name, response.score)
            else:
                if stats is not None:
                    stats.skipped += 1
                if failure_fh is not None:
                    failure_fh.write(json.dumps(
                        {"id": record.id, "caption": record.caption, "error": response.error},
                        ensure_ascii=False))
                    failure_fh.write("\n")

    try:
        batch: list[CaptionRecord] = []
        for record in records:
            batch.append(record)
            if len(batch) == batch_size:
                yield from handle(batch)
                batch = []
        if batch:
            yield from handle(batch)
    finally:
        if failure_fh is not None:
            failure_fh.close()
        if own_connection:
            conn.close()
