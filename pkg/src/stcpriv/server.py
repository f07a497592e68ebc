"""Honest-but-curious storage service: an inverted index behind a TCP frame protocol."""
from __future__ import annotations

import logging
import os
import socket
import socketserver
import threading
from pathlib import Path

import numpy as np

from . import wire
from .identification import PositionLists, private_decode, server_lookup
from .storage import DimensionMismatch, PublicDatabase, load_db, save_db
from .wire import MessageType, ProtocolError, WireMessage

__all__ = ["StorageService", "StorageServer", "StorageClient", "ServiceError", "resolve_db_path"]

log = logging.getLogger(__name__)


class ServiceError(RuntimeError):
    """An ERROR frame returned by the service."""


def resolve_db_path(cli_path: str | None) -> str | None:
    """``STC_DB`` in the environment overrides the command-line path."""
    return os.environ.get("STC_DB") or cli_path


class StorageService:
    """Request handling, independent of transport.

    Queries read a single database reference, which enrollment replaces
    atomically once the extended index is fully built.
    """

    def __init__(self, db: PublicDatabase | None = None, db_path: str | Path | None = None,
                 readonly: bool = False, L: int | None = None):
        self.db_path = Path(db_path) if db_path else None
        self.readonly = readonly
        if db is None and self.db_path is not None and self.db_path.exists():
            db = load_db(self.db_path)
        if db is None:
            if L is None:
                raise ValueError("an empty service needs a code length L")
            db = PublicDatabase.empty(L)
        self.db = db
        self._enroll_lock = threading.Lock()

    def handle_frame(self, frame: bytes) -> bytes:
        try:
            msg = WireMessage.decode(frame)
        except ProtocolError as e:
            return wire.error_message(str(e)).encode()
        return self.handle(msg).encode()

    def handle(self, msg: WireMessage) -> WireMessage:
        try:
            if msg.type == MessageType.QUERY_POSITIONS:
                return self.handle_query_positions(msg)
            if msg.type == MessageType.QUERY_FULL:
                return self.handle_query_full(msg)
            if msg.type == MessageType.ENROLL:
                return self.handle_enroll(msg)
            return wire.error_message(f"unsupported request type {msg.type.name}")
        except (ProtocolError, DimensionMismatch, IndexError) as e:
            return wire.error_message(str(e))

    def handle_query_positions(self, msg: WireMessage) -> WireMessage:
        positions = wire.parse_query_positions(msg)
        db = self.db
        bad = positions[(positions < 0) | (positions >= db.L)]
        if bad.size:
            return wire.error_message(f"position out of range: {int(bad[0])}")
        return wire.lists_message(server_lookup(positions, db))

    def handle_query_full(self, msg: WireMessage) -> WireMessage:
        code, gamma = wire.parse_query_full(msg)
        db = self.db
        if code.L != db.L:
            return wire.error_message(f"malformed code: length {code.L}, database uses {db.L}")
        return wire.shortlist_message(private_decode(code, db, gamma).entries)

    def handle_enroll(self, msg: WireMessage) -> WireMessage:
        if self.readonly:
            return wire.error_message("read-only service")
        if not self._enroll_lock.acquire(blocking=False):
            return wire.error_message("busy")
        try:
            P = wire.parse_enroll_request(msg)
            old = self.db
            if P.shape[0] != old.L:
                raise DimensionMismatch(f"dimension mismatch: codes of length {P.shape[0]}, database uses {old.L}")
            new = old.extend(P)
            if self.db_path is not None:
                save_db(self.db_path, new)
            self.db = new
            log.info("enrolled %d codes (M=%d)", P.shape[1], new.M)
            return wire.enroll_reply(old.M, P.shape[1], new.M)
        finally:
            self._enroll_lock.release()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        service: StorageService = self.server.service
        while True:
            try:
                frame = wire.read_frame(self.request)
            except ProtocolError as e:
                wire.send_frame(self.request, wire.error_message(str(e)))
                return
            except OSError:
                return
            if frame is None:
                return
            self.request.sendall(service.handle_frame(frame))


class StorageServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, service: StorageService, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.service = service

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t


class StorageClient:
    """Blocking client; keeps the raw bytes of the last request and reply for inspection."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.last_request = b""
        self.last_reply = b""

    def close(self):
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def request(self, msg: WireMessage) -> WireMessage:
        self.last_request = wire.send_frame(self.sock, msg)
        frame = wire.read_frame(self.sock)
        if frame is None:
            raise ServiceError("connection closed by server")
        self.last_reply = frame
        reply = WireMessage.decode(frame)
        if reply.type == MessageType.ERROR:
            raise ServiceError(reply.text())
        return reply

    def enroll(self, codes: np.ndarray) -> tuple[int, int, int]:
        return wire.parse_enroll_reply(self.request(wire.enroll_request(codes)))

    def query_positions(self, positions) -> PositionLists:
        return wire.parse_lists(self.request(wire.query_positions(positions)))

    def query_full(self, code, gamma: float) -> list[tuple[int, float]]:
        return wire.parse_shortlist(self.request(wire.query_full(code, gamma)))
