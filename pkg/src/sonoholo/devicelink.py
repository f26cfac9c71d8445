"""Quantized device frames, their wire encoding and paced streaming.

Wire layout (all integers little-endian)::

    0xAC 0x57 | u8 version | u32 sequence | u16 count | count x (u8 phase, u8 amp) | u16 crc

The CRC is CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no final
xor) over every byte before it. UDP sinks send one frame per datagram; file sinks
write frames back to back.
"""
from __future__ import annotations

import binascii
import logging
import math
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"\xac\x57"
VERSION = 1
PHASE_STEPS = 128
AMPLITUDE_MAX = 255
MAX_RATE = 10_000.0
BUSY_WAIT = 200e-6

_HEADER = struct.Struct("<2sBIH")
_CRC = struct.Struct("<H")


class DeviceLinkError(Exception):
    """Base class for every error raised by this module."""


class FrameError(DeviceLinkError, ValueError):
    """A byte sequence that cannot be decoded into a frame."""


class BadMagicError(FrameError):
    pass


class BadVersionError(FrameError):
    pass


class BadCrcError(FrameError):
    pass


class TruncatedFrameError(FrameError):
    pass


class TrailingBytesError(FrameError):
    pass


class QuantizationError(DeviceLinkError, ValueError):
    pass


class SinkError(DeviceLinkError, OSError):
    """The sink could not be opened or written after all retries."""


def crc16(data: bytes) -> int:
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True, eq=False)
class DeviceFrame:
    """One phase/amplitude snapshot for every transducer."""

    phase: np.ndarray
    amplitude: np.ndarray
    sequence: int = 0

    def __post_init__(self):
        ph = np.array(self.phase, dtype=np.int64).ravel()
        am = np.array(self.amplitude, dtype=np.int64).ravel()
        if ph.shape != am.shape:
            raise ValueError(f"{ph.size} phase indices but {am.size} amplitude indices")
        if not 0 < ph.size <= 0xFFFF:
            raise ValueError(f"transducer count {ph.size} outside 1..65535")
        if ph.min() < 0 or ph.max() >= PHASE_STEPS:
            raise ValueError(f"phase index outside 0..{PHASE_STEPS - 1}")
        if am.min() < 0 or am.max() > AMPLITUDE_MAX:
            raise ValueError(f"amplitude index outside 0..{AMPLITUDE_MAX}")
        if not 0 <= int(self.sequence) <= 0xFFFFFFFF:
            raise ValueError(f"sequence {self.sequence} does not fit in 32 bits")
        ph, am = ph.astype(np.uint8), am.astype(np.uint8)
        ph.setflags(write=False)
        am.setflags(write=False)
        object.__setattr__(self, "phase", ph)
        object.__setattr__(self, "amplitude", am)
        object.__setattr__(self, "sequence", int(self.sequence))

    @property
    def count(self) -> int:
        return int(self.phase.size)

    def __len__(self):
        return self.count

    def __eq__(self, other):
        if not isinstance(other, DeviceFrame):
            return NotImplemented
        return (
            self.sequence == other.sequence
            and np.array_equal(self.phase, other.phase)
            and np.array_equal(self.amplitude, other.amplitude)
        )

    __hash__ = None


def frame_size(count: int) -> int:
    return _HEADER.size + 2 * count + _CRC.size


def quantize(x, sequence: int = 0) -> DeviceFrame:
    """Round a hologram onto the device grid.

    Phase index ``round((phi mod 2pi) / (2pi/128)) mod 128``; amplitude index
    ``round(255 A)``. Amplitudes above ``1 + 1e-9`` are rejected.
    """
    z = np.asarray(getattr(x, "activations", x), dtype=complex).ravel()
    amp = np.abs(z)
    if not np.all(np.isfinite(amp)):
        raise QuantizationError("hologram contains non-finite activations")
    if amp.size and amp.max() > 1.0 + 1e-9:
        worst = int(np.argmax(amp))
        raise QuantizationError(f"transducer {worst} has amplitude {amp[worst]!r} > 1")
    step = 2.0 * math.pi / PHASE_STEPS
    phase = np.mod(np.angle(z), 2.0 * math.pi)
    ph = np.mod(np.rint(phase / step).astype(np.int64), PHASE_STEPS)
    am = np.minimum(np.rint(AMPLITUDE_MAX * amp).astype(np.int64), AMPLITUDE_MAX)
    return DeviceFrame(ph, am, sequence)


def dequantize(frame: DeviceFrame) -> np.ndarray:
    phase = frame.phase.astype(float) * (2.0 * math.pi / PHASE_STEPS)
    return frame.amplitude.astype(float) / AMPLITUDE_MAX * np.exp(1j * phase)


def encode_frame(frame: DeviceFrame) -> bytes:
    body = np.empty(2 * frame.count, dtype=np.uint8)
    body[0::2] = frame.phase
    body[1::2] = frame.amplitude
    data = _HEADER.pack(MAGIC, VERSION, frame.sequence, frame.count) + body.tobytes()
    return data + _CRC.pack(crc16(data))


def decode_frame(data: bytes) -> DeviceFrame:
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise TruncatedFrameError(f"{len(data)} bytes is shorter than the {_HEADER.size}-byte header")
    magic, version, seq, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic.hex()}")
    if version != VERSION:
        raise BadVersionError(f"unsupported frame version {version}")
    need = frame_size(count)
    if len(data) < need:
        raise TruncatedFrameError(f"frame of {count} transducers needs {need} bytes, got {len(data)}")
    if len(data) > need:
        raise TrailingBytesError(f"{len(data) - need} unexpected bytes after the frame")
    (crc,) = _CRC.unpack_from(data, need - _CRC.size)
    actual = crc16(data[: need - _CRC.size])
    if crc != actual:
        raise BadCrcError(f"crc mismatch: frame says {crc:#06x}, computed {actual:#06x}")
    body = np.frombuffer(data, dtype=np.uint8, count=2 * count, offset=_HEADER.size)
    if count and body[0::2].max() >= PHASE_STEPS:
        raise FrameError("phase index out of range")
    return DeviceFrame(body[0::2], body[1::2], seq)


def split_frames(data: bytes) -> list[DeviceFrame]:
    """Decode a file sink's concatenated frames."""
    frames, pos = [], 0
    while pos < len(data):
        if len(data) - pos < _HEADER.size:
            raise TruncatedFrameError(f"{len(data) - pos} stray bytes at offset {pos}")
        count = _HEADER.unpack_from(data, pos)[3]
        end = pos + frame_size(count)
        frames.append(decode_frame(data[pos:end]))
        pos = end
    return frames


# ----------------------------------------------------------------------- sinks


class LoopbackSink:
    """Keeps every frame with its send time (``time.monotonic`` seconds)."""

    def __init__(self):
        self.records: list[tuple[int, float, bytes]] = []

    def open(self):
        pass

    def send(self, data: bytes, sequence: int, timestamp: float):
        self.records.append((sequence, timestamp, data))

    def close(self):
        pass

    @property
    def sequences(self) -> list[int]:
        return [r[0] for r in self.records]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([r[1] for r in self.records])


class UdpSink:
    def __init__(self, host: str, port: int):
        self.address = (host, port)
        self._sock = None

    def open(self):
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.connect(self.address)
        except OSError:
            sock.close()
            raise
        self._sock = sock

    def send(self, data: bytes, sequence: int, timestamp: float):
        self._sock.send(data)

    def close(self):
        if self._sock is not None:
            self._sock.close()
            self._sock = None


class FileSink:
    def __init__(self, path):
        self.path = Path(path)
        self._fh = None

    def open(self):
        self._fh = open(self.path, "wb")

    def send(self, data: bytes, sequence: int, timestamp: float):
        self._fh.write(data)

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def parse_sink(spec):
    """``loopback``, ``udp:host:port`` or ``file:path``; sink objects pass through."""
    if not isinstance(spec, str):
        return spec
    if spec == "loopback":
        return LoopbackSink()
    kind, _, rest = spec.partition(":")
    if kind == "udp":
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit() or not 0 < int(port) < 65536:
            raise ValueError(f"udp sink needs udp:host:port, got {spec!r}")
        return UdpSink(host, int(port))
    if kind == "file" and rest:
        return FileSink(rest)
    raise ValueError(f"unknown sink {spec!r}; expected loopback, udp:host:port or file:path")


def _with_retries(action, what: str, retries: int, delay: float):
    for attempt in range(retries + 1):
        try:
            return action()
        except OSError as exc:
            if attempt == retries:
                raise SinkError(f"{what} failed after {retries + 1} attempt(s): {exc}") from exc
            log.debug("%s failed (%s), retrying", what, exc)
            time.sleep(delay)


# -------------------------------------------------------------------- pacing


@dataclass(frozen=True)
class StreamReport:
    frames: int
    target_rate: float
    achieved_rate: float
    max_jitter: float
    late_frames: int = 0

    def as_dict(self) -> dict:
        return {
            "frames": self.frames,
            "target_rate_hz": self.target_rate,
            "achieved_rate_hz": self.achieved_rate,
            "max_jitter_s": self.max_jitter,
            "late_frames": self.late_frames,
        }


def _check_rate(rate: float) -> float:
    rate = float(rate)
    if not 1.0 <= rate <= MAX_RATE:
        raise ValueError(f"rate must be within 1..{MAX_RATE:g} Hz, got {rate:g}")
    return rate


def _sleep_until(deadline: float):
    # coarse sleep, then spin through the last stretch
    remaining = deadline - time.monotonic()
    if remaining > BUSY_WAIT:
        time.sleep(remaining - BUSY_WAIT)
    while time.monotonic() < deadline:
        pass


def _as_wire(frame, expected_count):
    if isinstance(frame, DeviceFrame):
        if expected_count is not None and frame.count != expected_count:
            raise ValueError(f"frame {frame.sequence} has {frame.count} transducers, board has {expected_count}")
        return encode_frame(frame), frame.sequence
    data = bytes(frame)
    return data, _HEADER.unpack_from(data)[2] if len(data) >= _HEADER.size else -1


def _pace(frames: Iterator, sink, rate: float, retries: int, retry_delay: float, expected_count) -> StreamReport:
    period = 1.0 / rate
    sent, jitter, late = 0, 0.0, 0
    _with_retries(sink.open, "opening sink", retries, retry_delay)
    try:
        t0 = time.monotonic()
        for frame in frames:
            data, seq = _as_wire(frame, expected_count)
            deadline = t0 + sent * period
            _sleep_until(deadline)
            now = time.monotonic()
            _with_retries(lambda: sink.send(data, seq, now), f"sending frame {seq}", retries, retry_delay)
            lag = now - deadline
            jitter = max(jitter, abs(lag))
            if lag > period:
                late += 1
            sent += 1
        # hold the last slot so the rate is measured over whole periods
        _sleep_until(t0 + sent * period)
        elapsed = time.monotonic() - t0
    finally:
        sink.close()
    achieved = sent / elapsed if sent else 0.0
    report = StreamReport(sent, rate, achieved, jitter, late)
    if sent and achieved < 0.95 * rate:
        log.warning("stream fell behind: %.1f Hz achieved for %.1f Hz target (%d late frame(s))", achieved, rate, late)
    return report


def stream(
    frames: Iterable,
    sink="loopback",
    rate: float = 1000.0,
    *,
    retries: int = 3,
    retry_delay: float = 0.05,
    expected_count: int | None = None,
) -> tuple[StreamReport, object]:
    """Send ``frames`` (``DeviceFrame`` or encoded bytes) to ``sink`` at ``rate`` Hz.

    Frame ``i`` is released at ``t0 + i/rate`` on the monotonic clock. Late frames
    are still sent, never dropped. Returns the report and the sink, so loopback
    records can be inspected.
    """
    rate = _check_rate(rate)
    sink = parse_sink(sink)
    return _pace(iter(frames), sink, rate, retries, retry_delay, expected_count), sink


_DONE = object()


class Streamer:
    """Pacing loop on its own thread, fed through a bounded queue.

    ``submit`` blocks while the queue is full. ``close`` drains the queue and
    returns the report.
    """

    def __init__(self, sink="loopback", rate: float = 1000.0, *, queue_size: int = 64, retries: int = 3,
                 retry_delay: float = 0.05, expected_count: int | None = None):
        self.rate = _check_rate(rate)
        self.sink = parse_sink(sink)
        self._queue: queue.Queue = queue.Queue(maxsize=queue_size)
        self._result: dict = {}
        self._closed = False
        self._thread = threading.Thread(
            target=self._run, args=(retries, retry_delay, expected_count), name="sonoholo-stream", daemon=True
        )
        self._thread.start()

    def _items(self):
        while True:
            item = self._queue.get()
            if item is _DONE:
                return
            yield item

    def _run(self, retries, retry_delay, expected_count):
        try:
            self._result["report"] = _pace(self._items(), self.sink, self.rate, retries, retry_delay, expected_count)
        except BaseException as exc:  # surfaced by close()
            self._result["error"] = exc
            # unblock any producer stuck on a full queue
            while True:
                try:
                    self._queue.get_nowait()
                except queue.Empty:
                    break

    def submit(self, frame):
        if self._closed:
            raise DeviceLinkError("streamer is closed")
        if "error" in self._result:
            raise self._result["error"]
        self._queue.put(frame)

    def close(self) -> StreamReport:
        if not self._closed:
            self._closed = True
            if "error" not in self._result:
                self._queue.put(_DONE)
            self._thread.join()
        if "error" in self._result:
            raise self._result["error"]
        return self._result["report"]

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def frames_for(holograms, start_sequence: int = 0) -> Iterator[DeviceFrame]:
    for i, h in enumerate(holograms):
        yield quantize(h, start_sequence + i)


__all__ = [
    "BadCrcError",
    "BadMagicError",
    "BadVersionError",
    "DeviceFrame",
    "DeviceLinkError",
    "FileSink",
    "FrameError",
    "LoopbackSink",
    "QuantizationError",
    "SinkError",
    "StreamReport",
    "Streamer",
    "TrailingBytesError",
    "TruncatedFrameError",
    "UdpSink",
    "crc16",
    "decode_frame",
    "dequantize",
    "encode_frame",
    "frame_size",
    "frames_for",
    "parse_sink",
    "quantize",
    "split_frames",
    "stream",
]
