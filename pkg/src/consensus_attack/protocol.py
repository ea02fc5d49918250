"""Newline-delimited JSON protocol for classifiers living in another process.

Request:  ``{"id": <u64>, "inputs": [[float, ...], ...]}``
Response: ``{"id": <u64>, "logits": [[float, ...], ...]}``

One response per request, UTF-8, one JSON document per line. Transports are
TCP (``tcp://host:port``) or a child process spoken to over stdin/stdout.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import socket
import socketserver
import subprocess
import threading

import numpy as np

from .classifiers import Classifier
from .exceptions import ProtocolError, ShapeError, TransportError

__all__ = [
    "RemoteClassifier",
    "remote_classify",
    "EchoResponder",
    "serve_stream",
    "make_tcp_server",
    "encode_request",
    "decode_response",
]

logger = logging.getLogger(__name__)

MAX_CHUNK = 64
MAX_ID = 2**64 - 1


def encode_request(request_id, inputs):
    rows = np.asarray(inputs, dtype=float)
    if not np.all(np.isfinite(rows)):
        raise ProtocolError("inputs must be finite")
    return json.dumps({"id": int(request_id), "inputs": rows.tolist()}) + "\n"


def decode_response(line, expected_id, expected_rows):
    """Parse one response line and check its id and shape."""
    if not line:
        raise TransportError("connection closed before a response arrived")
    try:
        msg = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed response: {line[:80]!r}") from exc
    if not isinstance(msg, dict):
        raise ProtocolError("response must be a JSON object")
    if "error" in msg:
        raise ProtocolError(f"server reported an error: {msg['error']}")
    if msg.get("id") != expected_id:
        raise ProtocolError(f"response id {msg.get('id')!r} does not match request id {expected_id}")
    logits = msg.get("logits")
    if not isinstance(logits, list) or len(logits) != expected_rows:
        raise ProtocolError(f"expected {expected_rows} logit rows")
    try:
        out = np.asarray(logits, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProtocolError("logits are not a rectangular numeric array") from exc
    if out.ndim != 2 or not np.all(np.isfinite(out)):
        raise ProtocolError("logits must be a finite 2-d array")
    return out


class _TcpConnection:
    def __init__(self, host, port, timeout):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(timeout)
        self.reader = self.sock.makefile("r", encoding="utf-8", newline="\n")
        self.writer = self.sock.makefile("w", encoding="utf-8", newline="\n")

    def roundtrip(self, line):
        self.writer.write(line)
        self.writer.flush()
        return self.reader.readline()

    def close(self):
        for f in (self.reader, self.writer, self.sock):
            try:
                f.close()
            except OSError:
                pass


class _ProcessConnection:
    def __init__(self, command, timeout):
        self.timeout = timeout
        self.proc = subprocess.Popen(
            command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, encoding="utf-8", bufsize=1
        )

    def roundtrip(self, line):
        self.proc.stdin.write(line)
        self.proc.stdin.flush()
        result = {}

        def read():
            result["line"] = self.proc.stdout.readline()

        reader = threading.Thread(target=read, daemon=True)
        reader.start()
        reader.join(self.timeout)
        if reader.is_alive():
            raise TimeoutError(f"no response within {self.timeout} s")
        return result["line"]

    def close(self):
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        self.proc.terminate()
        self.proc.wait(timeout=5)


def _parse_endpoint(endpoint):
    if isinstance(endpoint, (list, tuple)) and endpoint and all(isinstance(v, str) for v in endpoint):
        return "process", list(endpoint)
    if isinstance(endpoint, str) and endpoint.startswith("tcp://"):
        host, _, port = endpoint[len("tcp://"):].rpartition(":")
        return "tcp", (host or "127.0.0.1", int(port))
    raise ValueError(f"unsupported endpoint {endpoint!r}; use 'tcp://host:port' or a command list")


class RemoteClassifier(Classifier):
    """Classifier backed by a server speaking the line protocol.

    Parameters
    ----------
    endpoint : str or list of str
        ``"tcp://host:port"`` or a command whose stdin/stdout carry the protocol.
    input_dim, n_classes : int, optional
        Checked against responses when given.
    timeout : float
        Seconds to wait for each response.
    outputs : {"logits", "probabilities"}
        With "probabilities" the client takes the log of what the server
        returns so that downstream losses always see logits.
    max_attempts : int
        Transport failures are retried this many times in total.
    """

    def __init__(self, endpoint, input_dim=None, n_classes=None, timeout=30.0,
                 outputs="logits", max_attempts=3, chunk_size=MAX_CHUNK):
        self.kind, self.address = _parse_endpoint(endpoint)
        self.input_dim = input_dim
        self.n_classes = n_classes
        self.timeout = float(timeout)
        if outputs not in ("logits", "probabilities"):
            raise ValueError(f"outputs must be 'logits' or 'probabilities', got {outputs!r}")
        self.outputs = outputs
        self.max_attempts = int(max_attempts)
        self.chunk_size = max(1, min(int(chunk_size), MAX_CHUNK))
        self._ids = itertools.count(1)
        self._conn = None
        self._lock = threading.Lock()

    def _connect(self):
        if self.kind == "tcp":
            return _TcpConnection(*self.address, timeout=self.timeout)
        return _ProcessConnection(self.address, timeout=self.timeout)

    def close(self):
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, rows):
        request_id = next(self._ids) % MAX_ID
        line = encode_request(request_id, rows)
        last_error = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                if self._conn is None:
                    self._conn = self._connect()
                reply = self._conn.roundtrip(line)
                if not reply:
                    raise ConnectionError("connection closed by server")
                return decode_response(reply, request_id, len(rows))
            except (OSError, TimeoutError) as exc:
                last_error = exc
                logger.warning("transport failure (attempt %d/%d): %s", attempt, self.max_attempts, exc)
                self.close()
        raise TransportError(f"giving up after {self.max_attempts} attempts: {last_error}")

    def predict_logits(self, X):
        X = np.asarray(X, dtype=float)
        X = X.reshape(1, -1) if X.ndim == 1 else X.reshape(len(X), -1)
        if self.input_dim is not None and X.shape[1] != self.input_dim:
            raise ShapeError(f"expected inputs of dimension {self.input_dim}, got {X.shape[1]}")
        chunks = []
        with self._lock:
            for start in range(0, len(X), self.chunk_size):
                chunks.append(self._request(X[start:start + self.chunk_size]))
        out = np.concatenate(chunks) if chunks else np.zeros((0, self.n_classes or 0))
        if self.n_classes is not None and out.shape[1] != self.n_classes:
            raise ProtocolError(f"expected {self.n_classes} logits per input, got {out.shape[1]}")
        if self.outputs == "probabilities":
            with np.errstate(divide="ignore"):
                out = np.log(np.clip(out, 1e-300, None))
        return out


def remote_classify(endpoint, inputs, **kwargs):
    """One-shot helper: open a connection, classify ``inputs``, close."""
    with RemoteClassifier(endpoint, **kwargs) as clf:
        return clf.predict_logits(inputs)


class EchoResponder:
    """Request handler used by ``serve-echo``.

    mode ``"echo"`` returns each input row as its own logits, ``"fixed"``
    returns ``fixed_logits`` for every row, and ``"model"`` evaluates
    ``classifier``.
    """

    def __init__(self, mode="echo", fixed_logits=None, classifier=None):
        if mode not in ("echo", "fixed", "model"):
            raise ValueError(f"unknown responder mode {mode!r}")
        if mode == "fixed" and fixed_logits is None:
            raise ValueError("fixed mode needs fixed_logits")
        if mode == "model" and classifier is None:
            raise ValueError("model mode needs a classifier")
        self.mode = mode
        self.fixed_logits = None if fixed_logits is None else [float(v) for v in fixed_logits]
        self.classifier = classifier

    def respond(self, line):
        try:
            msg = json.loads(line)
            request_id = msg["id"]
            inputs = msg["inputs"]
            if not isinstance(request_id, int) or not 0 <= request_id <= MAX_ID:
                raise ValueError("id must be an unsigned 64-bit integer")
            if not isinstance(inputs, list):
                raise ValueError("inputs must be a list")
        except (ValueError, KeyError, TypeError) as exc:
            return json.dumps({"id": None, "error": f"bad request: {exc}"}) + "\n"
        if self.mode == "echo":
            logits = inputs
        elif self.mode == "fixed":
            logits = [self.fixed_logits for _ in inputs]
        else:
            logits = self.classifier.predict_logits(np.asarray(inputs, dtype=float)).tolist()
        if any(not math.isfinite(v) for row in logits for v in row):
            return json.dumps({"id": request_id, "error": "non-finite output"}) + "\n"
        return json.dumps({"id": request_id, "logits": logits}) + "\n"


def serve_stream(responder, instream, outstream):
    """Answer requests line by line until ``instream`` is exhausted."""
    for line in instream:
        if not line.strip():
            continue
        outstream.write(responder.respond(line))
        outstream.flush()


def make_tcp_server(responder, host="127.0.0.1", port=0):
    """A threading TCP server; call ``serve_forever`` (or run it in a thread)."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                line = raw.decode("utf-8")
                if not line.strip():
                    continue
                self.wfile.write(responder.respond(line).encode("utf-8"))
                self.wfile.flush()

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    return Server((host, port), Handler)
