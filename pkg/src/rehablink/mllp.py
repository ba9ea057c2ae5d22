"""MLLP-style framing and the EHR simulator endpoint.

Frames are ``0x0B payload 0x1C 0x0D``. The simulator stores messages in a
directory tree (one ``.hl7`` file per message, one subdirectory per ISO
week) and optionally fronts it with a socket service: a client either
pushes result messages or sends a single query frame ``WEEK <iso-week>``
and receives one frame per stored message for that week.
"""

from __future__ import annotations

import socket
import socketserver
import threading
from pathlib import Path

from .errors import EndpointUnavailable, MalformedMessage

START_BLOCK = b"\x0b"
END_BLOCK = b"\x1c"
CARRIAGE_RETURN = b"\x0d"


def frame(payload: bytes) -> bytes:
    return START_BLOCK + payload + END_BLOCK + CARRIAGE_RETURN


def deframe_stream(buffer: bytes) -> tuple[list[bytes], bytes]:
    """Complete frames plus the unconsumed tail of a byte stream."""
    frames = []
    rest = buffer
    while True:
        start = rest.find(START_BLOCK)
        if start == -1:
            return frames, b""
        end = rest.find(END_BLOCK + CARRIAGE_RETURN, start + 1)
        if end == -1:
            return frames, rest[start:]
        frames.append(rest[start + 1:end])
        rest = rest[end + 2:]


def deframe_one(data: bytes) -> bytes:
    if not (data.startswith(START_BLOCK) and data.endswith(END_BLOCK + CARRIAGE_RETURN)):
        raise MalformedMessage("payload is not a single MLLP frame")
    return data[1:-2]


class EhrSimulator:
    """Directory-backed stand-in for the clinic EHR.

    Pulled messages live under ``<root>/outbound/<iso-week>/``; messages we
    return to the EHR are filed under ``<root>/inbound/`` keyed by their
    MSH-10 control id, which makes delivery idempotent.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        (self.root / "outbound").mkdir(parents=True, exist_ok=True)
        (self.root / "inbound").mkdir(parents=True, exist_ok=True)

    def load_outbound(self, iso_week: str, payloads: list[bytes]) -> None:
        week_dir = self.root / "outbound" / iso_week
        week_dir.mkdir(parents=True, exist_ok=True)
        existing = len(list(week_dir.glob("*.hl7")))
        for i, payload in enumerate(payloads, start=existing):
            (week_dir / f"msg{i:05d}.hl7").write_bytes(payload)

    def pull_week(self, iso_week: str) -> list[bytes]:
        week_dir = self.root / "outbound" / iso_week
        if not week_dir.is_dir():
            return []
        return [p.read_bytes() for p in sorted(week_dir.glob("*.hl7"))]

    def file_inbound(self, control_id: str, payload: bytes) -> Path:
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in control_id)
        path = self.root / "inbound" / f"{safe}.hl7"
        path.write_bytes(payload)
        return path

    def inbound_ids(self) -> list[str]:
        return sorted(p.stem for p in (self.root / "inbound").glob("*.hl7"))

    def inbound_payloads(self) -> list[bytes]:
        return [p.read_bytes()
                for p in sorted((self.root / "inbound").glob("*.hl7"))]


class _SimulatorHandler(socketserver.StreamRequestHandler):
    def handle(self):
        buffer = b""
        while True:
            chunk = self.request.recv(65536)
            if not chunk:
                break
            buffer += chunk
            frames, buffer = deframe_stream(buffer)
            for payload in frames:
                if payload.startswith(b"WEEK "):
                    week = payload[5:].decode("ascii").strip()
                    for msg in self.server.simulator.pull_week(week):
                        self.request.sendall(frame(msg))
                    self.request.sendall(frame(b"DONE"))
                else:
                    control = _control_id(payload)
                    self.server.simulator.file_inbound(control, payload)
                    self.request.sendall(frame(b"ACK " + control.encode("ascii")))


def _control_id(payload: bytes) -> str:
    from .er7 import parse_er7
    try:
        return parse_er7(payload).value("MSH", 10) or "no-control-id"
    except MalformedMessage:
        return "malformed"


class SimulatorServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, simulator: EhrSimulator, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _SimulatorHandler)
        self.simulator = simulator
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def start(self) -> "SimulatorServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


class MllpClient:
    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.host = host
        self.port = port
        self.timeout = timeout

    def _connect(self) -> socket.socket:
        try:
            return socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise EndpointUnavailable(f"{self.host}:{self.port}: {exc}") from None

    def send(self, payload: bytes) -> bytes:
        """Deliver one frame and return the single response frame."""
        with self._connect() as sock:
            sock.sendall(frame(payload))
            return self._recv_frames(sock, stop_after=1)[0]

    def query_week(self, iso_week: str) -> list[bytes]:
        """Pull all stored messages for a week; DONE sentinel terminates."""
        with self._connect() as sock:
            sock.sendall(frame(b"WEEK " + iso_week.encode("ascii")))
            frames = self._recv_frames(sock, until_done=True)
        return [f for f in frames if f != b"DONE"]

    def _recv_frames(self, sock: socket.socket, stop_after: int | None = None,
                     until_done: bool = False) -> list[bytes]:
        buffer = b""
        collected: list[bytes] = []
        while True:
            try:
                chunk = sock.recv(65536)
            except socket.timeout:
                raise EndpointUnavailable("timed out waiting for response frame") from None
            if not chunk:
                break
            buffer += chunk
            frames, buffer = deframe_stream(buffer)
            collected.extend(frames)
            if stop_after is not None and len(collected) >= stop_after:
                return collected
            if until_done and collected and collected[-1] == b"DONE":
                return collected
        if (stop_after is not None and len(collected) < stop_after) or until_done:
            raise EndpointUnavailable("connection closed mid-conversation")
        return collected
