"""Line-delimited JSON wire protocol for out-of-process backends.

Requests are single JSON objects, one per line (or per HTTP POST body):

    {"op": "masked",   "tokens": [...], "position": k}
    {"op": "classify", "tokens": [...]}
    {"op": "score",    "tokens": [...]}
    {"op": "next",     "prefix": [...]}

Responses mirror the op. Token distributions come back either in full,
``{"probs": {token: p, ...}}``, or truncated,
``{"top": [[token, logp], ...], "other_logp": x}``; the client renormalizes
a truncated response and assigns the residual mass to a catch-all symbol.
Classification returns ``{"probs": [p0, p1]}``, scoring ``{"score": s}``,
and failures ``{"error": "message"}``.

``ServiceBackend`` is the client and implements all four backend
interfaces over ``http(s)://`` or ``tcp://host:port`` endpoints. The
``serve_*`` helpers wrap any in-process backends in a protocol server,
which is how a neural model in another process (or the tests) attach.
"""

from __future__ import annotations

import json
import math
import socket
import socketserver
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Sequence
from urllib.parse import urlparse

from ..exceptions import ServiceProtocolError
from ..text import (
    BEGIN_TOKEN,
    END_OF_TEXT_TOKEN,
    END_TOKEN,
    MASK_TOKEN,
    TokenSequence,
    UNKNOWN_TOKEN,
)
from .base import (
    ChoiceScorerBackend,
    GeneratorBackend,
    MaskedLMBackend,
    PairClassifierBackend,
    VocabDistribution,
)


class ServiceBackend(MaskedLMBackend, PairClassifierBackend, ChoiceScorerBackend, GeneratorBackend):
    """Client adapter speaking the wire protocol.

    Marker names are client-side configuration because the protocol itself
    only moves tokens; they must match whatever the served model expects.
    A fresh connection is opened per call, so instances are safe to share
    across threads.
    """

    def __init__(
        self,
        url: str,
        timeout: float = 10.0,
        begin_marker: str = BEGIN_TOKEN,
        end_marker: str = END_TOKEN,
        mask_token: str = MASK_TOKEN,
        unknown_token: str = UNKNOWN_TOKEN,
        eot_token: str = END_OF_TEXT_TOKEN,
    ):
        parsed = urlparse(url)
        if parsed.scheme not in ("http", "https", "tcp"):
            raise ValueError(f"unsupported service url {url!r}; use http(s):// or tcp://")
        if parsed.scheme == "tcp" and not (parsed.hostname and parsed.port):
            raise ValueError(f"tcp service url needs host and port, got {url!r}")
        self.url = url
        self.timeout = timeout
        self.begin_marker = begin_marker
        self.end_marker = end_marker
        self.mask_token = mask_token
        self.unknown_token = unknown_token
        self.eot_token = eot_token
        self._parsed = parsed

    # The remote vocabulary is not enumerable over the protocol; expose the
    # configured marker names, which is all local code relies on.
    @property
    def vocabulary(self) -> frozenset[str]:
        return frozenset(
            {self.begin_marker, self.end_marker, self.mask_token, self.unknown_token, self.eot_token}
        )

    def _call(self, payload: dict) -> dict:
        line = json.dumps(payload, ensure_ascii=False)
        try:
            if self._parsed.scheme == "tcp":
                raw = self._call_tcp(line)
            else:
                raw = self._call_http(line)
        except (OSError, urllib.error.URLError) as exc:
            raise ServiceProtocolError(f"service call to {self.url} failed: {exc}") from exc
        try:
            response = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ServiceProtocolError(f"service sent invalid JSON: {raw[:200]!r}") from exc
        if not isinstance(response, dict):
            raise ServiceProtocolError(f"service response is not an object: {raw[:200]!r}")
        if "error" in response:
            raise ServiceProtocolError(f"service error: {response['error']}")
        return response

    def _call_http(self, line: str) -> str:
        request = urllib.request.Request(
            self.url,
            data=(line + "\n").encode("utf-8"),
            headers={"Content-Type": "application/x-ndjson"},
            method="POST",
        )
        with urllib.request.urlopen(request, timeout=self.timeout) as reply:
            return reply.read().decode("utf-8").strip()

    def _call_tcp(self, line: str) -> str:
        address = (self._parsed.hostname, self._parsed.port)
        with socket.create_connection(address, timeout=self.timeout) as conn:
            conn.sendall((line + "\n").encode("utf-8"))
            reader = conn.makefile("r", encoding="utf-8")
            reply = reader.readline()
        if not reply:
            raise ServiceProtocolError(f"service at {self.url} closed the connection")
        return reply.strip()

    def _distribution_from(self, response: dict) -> VocabDistribution:
        if "probs" in response:
            probs = response["probs"]
            if not isinstance(probs, dict):
                raise ServiceProtocolError('"probs" must map tokens to probabilities')
            try:
                return VocabDistribution({str(t): float(p) for t, p in probs.items()})
            except (TypeError, ValueError) as exc:
                raise ServiceProtocolError(f"invalid distribution from service: {exc}") from exc
        if "top" in response:
            return self._renormalize_top(response)
        raise ServiceProtocolError(f'response has neither "probs" nor "top": {response}')

    def _renormalize_top(self, response: dict) -> VocabDistribution:
        """Turn a truncated top-k response into a proper distribution.

        Residual mass (everything the server left out) lands on the
        catch-all unknown symbol, so lookups of unlisted tokens get the
        leftover share instead of zero.
        """
        top = response["top"]
        if not isinstance(top, list) or not top:
            raise ServiceProtocolError('"top" must be a non-empty list of [token, logp] pairs')
        masses: dict[str, float] = {}
        try:
            for token, logp in top:
                masses[str(token)] = masses.get(str(token), 0.0) + math.exp(float(logp))
            other = math.exp(float(response["other_logp"]))
        except (TypeError, ValueError, KeyError) as exc:
            raise ServiceProtocolError(f"invalid top-k response: {exc}") from exc
        total = math.fsum(masses.values()) + other
        if total <= 0 or not math.isfinite(total):
            raise ServiceProtocolError(f"top-k response has non-positive total mass {total}")
        probs = {t: m / total for t, m in masses.items()}
        residual = other / total
        probs[self.unknown_token] = probs.get(self.unknown_token, 0.0) + residual
        return VocabDistribution(probs, default_prob=probs[self.unknown_token])

    def predict_masked(self, seq: TokenSequence, position: int) -> VocabDistribution:
        self.check_masked_query(seq, position)
        response = self._call({"op": "masked", "tokens": list(seq.tokens), "position": position})
        return self._distribution_from(response)

    def classify_pair(self, seq: TokenSequence) -> tuple[float, float]:
        self.split_pair(seq)
        response = self._call({"op": "classify", "tokens": list(seq.tokens)})
        probs = response.get("probs")
        if (
            not isinstance(probs, list)
            or len(probs) != 2
            or not all(isinstance(p, (int, float)) and 0 <= p <= 1 for p in probs)
            or abs(sum(probs) - 1.0) > 1e-6
        ):
            raise ServiceProtocolError(f'classification "probs" must be two probabilities summing to 1, got {probs!r}')
        return (float(probs[0]), float(probs[1]))

    def score_choice(self, seq: TokenSequence) -> float:
        if not isinstance(seq, TokenSequence) or not seq.has_specials:
            raise ValueError("score_choice requires a marker-wrapped TokenSequence")
        response = self._call({"op": "score", "tokens": list(seq.tokens)})
        score = response.get("score")
        if not isinstance(score, (int, float)) or not math.isfinite(score):
            raise ServiceProtocolError(f'"score" must be a finite number, got {score!r}')
        return float(score)

    def next_token_distribution(self, prefix: Sequence[str]) -> VocabDistribution:
        response = self._call({"op": "next", "prefix": list(prefix)})
        return self._distribution_from(response)


@dataclass
class BackendSet:
    """The in-process backends a protocol server exposes; any may be None."""

    masked: MaskedLMBackend | None = None
    classifier: PairClassifierBackend | None = None
    scorer: ChoiceScorerBackend | None = None
    generator: GeneratorBackend | None = None


def handle_request(backends: BackendSet, payload: dict, top_k: int | None = None) -> dict:
    """Dispatch one decoded request against in-process backends.

    Pure apart from the backends themselves, so the protocol logic can be
    tested without sockets. ``top_k`` switches distribution responses to the
    truncated form with a residual ``other_logp``.
    """
    try:
        op = payload.get("op")
        if op == "masked":
            backend = _require(backends.masked, "masked")
            seq = TokenSequence(payload["tokens"], has_specials=True)
            dist = backend.predict_masked(seq, int(payload["position"]))
            return _encode_distribution(dist, top_k)
        if op == "classify":
            backend = _require(backends.classifier, "classify")
            seq = TokenSequence(payload["tokens"], has_specials=True)
            p0, p1 = backend.classify_pair(seq)
            return {"probs": [p0, p1]}
        if op == "score":
            backend = _require(backends.scorer, "score")
            seq = TokenSequence(payload["tokens"], has_specials=True)
            return {"score": backend.score_choice(seq)}
        if op == "next":
            backend = _require(backends.generator, "next")
            dist = backend.next_token_distribution(list(payload["prefix"]))
            return _encode_distribution(dist, top_k)
        return {"error": f"unknown op {op!r}"}
    except Exception as exc:  # the server must answer, not die
        return {"error": f"{type(exc).__name__}: {exc}"}


def _require(backend, op: str):
    if backend is None:
        raise ValueError(f"server has no backend for op {op!r}")
    return backend


def _encode_distribution(dist: VocabDistribution, top_k: int | None) -> dict:
    if top_k is None:
        return {"probs": dict(dist.probabilities)}
    ranked = sorted(dist.probabilities.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = ranked[:top_k]
    residual = math.fsum(p for _, p in ranked[top_k:])
    floor = 1e-300  # keeps log finite when the residual is exactly zero
    return {
        "top": [[t, math.log(max(p, floor))] for t, p in kept],
        "other_logp": math.log(max(residual, floor)),
    }


class _HTTPHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length).decode("utf-8")
        try:
            payload = json.loads(body)
            response = handle_request(self.server.backends, payload, self.server.top_k)
        except json.JSONDecodeError:
            response = {"error": "request is not valid JSON"}
        data = (json.dumps(response, ensure_ascii=False) + "\n").encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, fmt, *args):  # keep test output quiet
        pass


class _TCPHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8").strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
                response = handle_request(self.server.backends, payload, self.server.top_k)
            except json.JSONDecodeError:
                response = {"error": "request is not valid JSON"}
            self.wfile.write((json.dumps(response, ensure_ascii=False) + "\n").encode("utf-8"))


class BackendServer:
    """A running protocol server plus its endpoint url; use as a context manager."""

    def __init__(self, server, url: str):
        self._server = server
        self.url = url
        self._thread = threading.Thread(target=server.serve_forever, daemon=True)
        self._thread.start()

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "BackendServer":
        return self

    def __exit__(self, *exc_info):
        self.close()


def serve_http(backends: BackendSet, host: str = "127.0.0.1", port: int = 0, top_k: int | None = None) -> BackendServer:
    server = ThreadingHTTPServer((host, port), _HTTPHandler)
    server.backends = backends
    server.top_k = top_k
    return BackendServer(server, f"http://{host}:{server.server_address[1]}")


def serve_tcp(backends: BackendSet, host: str = "127.0.0.1", port: int = 0, top_k: int | None = None) -> BackendServer:
    class _Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    server = _Server((host, port), _TCPHandler)
    server.backends = backends
    server.top_k = top_k
    return BackendServer(server, f"tcp://{host}:{server.server_address[1]}")
