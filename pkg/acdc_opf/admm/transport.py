"""
Message exchange between regions.

Two transports route the same messages: `InProcessTransport` hands them
over in memory, `SocketTransport` encodes them into frames sent over one
stream socket per region, relayed by the coordinator's hub.

Frame layout (network byte order)::

    length   uint32   size of everything below
    version  uint8    PROTOCOL_VERSION
    type     uint8    DATA, START, BARRIER, CONVERGED or ABORT
    iter     uint32   iteration number
    sender   uint16   index of the sending region, 0xFFFF for the hub
    tie      uint32   tie index, 0 on control frames
    tag      uint8    1 for voltage values, 2 for power values, 0 otherwise
    count    uint16   number of payload values
    payload  float64 * count

One iteration on the socket transport: the hub sends START to every
region, each region writes its DATA frames followed by BARRIER, the hub
relays every DATA frame to the receiving region and closes the round with
one BARRIER per region.

Both ends of every socket pair stay in the coordinating process: the
region ends are written and read on behalf of the regions, so the frames
cross real sockets but no region runs in a process of its own.
"""

import logging
import socket
import struct
from enum import IntEnum
from typing import Dict, List, NamedTuple, Sequence, Tuple

from ..helper.exception import ProtocolError, StaleMessageError, TransportError
from ..partition import Partition
from .updates import Message

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
HUB = 0xFFFF

_LENGTH = struct.Struct("!I")
_HEADER = struct.Struct("!BBIHIBH")
_VALUE_SIZE = 8
TAGS = {"V": 1, "S": 2}
TAG_NAMES = {v: k for k, v in TAGS.items()}


class FrameType(IntEnum):
    DATA = 1
    START = 2
    BARRIER = 3
    CONVERGED = 4
    ABORT = 5


class Frame(NamedTuple):
    type: FrameType
    iteration: int
    sender: int
    tie: int = 0
    tag: int = 0
    values: Tuple[float, ...] = ()


def encode_frame(frame: Frame) -> bytes:
    count = len(frame.values)
    body = _HEADER.pack(
        PROTOCOL_VERSION,
        int(frame.type),
        frame.iteration,
        frame.sender,
        frame.tie,
        frame.tag,
        count,
    ) + struct.pack("!{}d".format(count), *frame.values)
    return _LENGTH.pack(len(body)) + body


def decode_frame(body: bytes) -> Frame:
    """Decode a frame without its length prefix"""
    if len(body) < _HEADER.size:
        raise ProtocolError("frame of {} bytes is shorter than its header", len(body))
    version, kind, iteration, sender, tie, tag, count = _HEADER.unpack_from(body)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(
            "protocol version {} received, {} expected", version, PROTOCOL_VERSION
        )
    try:
        kind = FrameType(kind)
    except ValueError:
        raise ProtocolError("unknown frame type {}", kind)
    if len(body) != _HEADER.size + _VALUE_SIZE * count:
        raise ProtocolError(
            "frame announces {} values but carries {} bytes", count, len(body)
        )
    values = struct.unpack_from("!{}d".format(count), body, _HEADER.size)
    return Frame(kind, iteration, sender, tie, tag, tuple(values))


def _recv_exact(sock: socket.socket, size: int) -> bytes:
    chunks = []
    while size:
        chunk = sock.recv(size)
        if not chunk:
            raise TransportError("connection closed by peer")
        chunks.append(chunk)
        size -= len(chunk)
    return b"".join(chunks)


def send_frame(sock: socket.socket, frame: Frame) -> None:
    sock.sendall(encode_frame(frame))


def read_frame(sock: socket.socket) -> Frame:
    (size,) = _LENGTH.unpack(_recv_exact(sock, _LENGTH.size))
    return decode_frame(_recv_exact(sock, size))


class InProcessTransport:
    """Routes messages in memory, in the order they were produced"""

    def __init__(self, regions: Sequence[str]):
        self.regions = list(regions)

    def exchange(
        self, iteration: int, outgoing: Dict[str, List[Message]]
    ) -> Dict[str, List[Message]]:
        inbox: Dict[str, List[Message]] = {r: [] for r in self.regions}
        for region in self.regions:
            for m in outgoing.get(region, []):
                if m.iteration != iteration:
                    raise StaleMessageError(
                        "region {} sent a message of iteration {} in iteration {}",
                        m.sender,
                        m.iteration,
                        iteration,
                    )
                inbox[m.receiver].append(m)
        return inbox

    def finish(self, converged: bool) -> None:
        pass

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SocketTransport(InProcessTransport):
    """
    One socket pair per region: the region end is used on behalf of the
    region, the hub end by the coordinator.
    """

    def __init__(self, regions: Sequence[str], routes: Dict[int, Tuple[str, str]]):
        super().__init__(regions)
        self.index = {r: i for i, r in enumerate(self.regions)}
        self.routes = routes
        self.region_end: Dict[str, socket.socket] = {}
        self.hub_end: Dict[str, socket.socket] = {}
        for r in self.regions:
            self.region_end[r], self.hub_end[r] = socket.socketpair()
        self.frames_relayed = 0

    def _receiver(self, sender: str, tie: int) -> str:
        if tie not in self.routes or sender not in self.routes[tie]:
            raise ProtocolError("region {} does not border tie {}", sender, tie)
        a, b = self.routes[tie]
        return b if sender == a else a

    def _expect(self, sock: socket.socket, kind: FrameType, iteration: int) -> Frame:
        frame = read_frame(sock)
        if frame.type != kind:
            raise ProtocolError("expected {} frame, got {}", kind.name, frame.type.name)
        if frame.iteration != iteration:
            raise StaleMessageError(
                "{} frame of iteration {} in iteration {}",
                kind.name,
                frame.iteration,
                iteration,
            )
        return frame

    def _send_regions(
        self, iteration: int, outgoing: Dict[str, List[Message]]
    ) -> None:
        for r in self.regions:
            sock = self.region_end[r]
            self._expect(sock, FrameType.START, iteration)
            for m in outgoing.get(r, []):
                frame = Frame(
                    FrameType.DATA,
                    m.iteration,
                    self.index[r],
                    m.tie,
                    TAGS[m.tag],
                    tuple(m.values),
                )
                send_frame(sock, frame)
            send_frame(sock, Frame(FrameType.BARRIER, iteration, self.index[r]))

    def _relay(self, iteration: int) -> None:
        relay: Dict[str, List[Frame]] = {r: [] for r in self.regions}
        for r in self.regions:
            while True:
                frame = read_frame(self.hub_end[r])
                if frame.type == FrameType.BARRIER and frame.iteration == iteration:
                    break
                if frame.type != FrameType.DATA:
                    raise ProtocolError(
                        "unexpected {} frame from region {}", frame.type.name, r
                    )
                if frame.iteration != iteration:
                    raise StaleMessageError(
                        "region {} sent a frame of iteration {} in iteration {}",
                        r,
                        frame.iteration,
                        iteration,
                    )
                if frame.sender != self.index[r]:
                    raise ProtocolError("region {} sent a frame as {}", r, frame.sender)
                relay[self._receiver(r, frame.tie)].append(frame)
        for r in self.regions:
            for frame in relay[r]:
                send_frame(self.hub_end[r], frame)
                self.frames_relayed += 1
            send_frame(self.hub_end[r], Frame(FrameType.BARRIER, iteration, HUB))

    def _receive_regions(self, iteration: int) -> Dict[str, List[Message]]:
        inbox: Dict[str, List[Message]] = {r: [] for r in self.regions}
        for r in self.regions:
            while True:
                frame = read_frame(self.region_end[r])
                if frame.type == FrameType.BARRIER:
                    break
                if frame.iteration != iteration:
                    raise StaleMessageError(
                        "frame of iteration {} delivered in iteration {}",
                        frame.iteration,
                        iteration,
                    )
                inbox[r].append(
                    Message(
                        iteration=frame.iteration,
                        sender=self.regions[frame.sender],
                        receiver=r,
                        tie=frame.tie,
                        tag=TAG_NAMES[frame.tag],
                        values=frame.values,
                    )
                )
        return inbox

    def exchange(
        self, iteration: int, outgoing: Dict[str, List[Message]]
    ) -> Dict[str, List[Message]]:
        for r in self.regions:
            send_frame(self.hub_end[r], Frame(FrameType.START, iteration, HUB))
        self._send_regions(iteration, outgoing)
        self._relay(iteration)
        return self._receive_regions(iteration)

    def finish(self, converged: bool) -> None:
        kind = FrameType.CONVERGED if converged else FrameType.ABORT
        for r in self.regions:
            send_frame(self.hub_end[r], Frame(kind, 0, HUB))
            frame = read_frame(self.region_end[r])
            if frame.type != kind:
                raise ProtocolError(
                    "expected {} frame, got {}", kind.name, frame.type.name
                )

    def close(self) -> None:
        for sock in list(self.region_end.values()) + list(self.hub_end.values()):
            sock.close()
        self.region_end, self.hub_end = {}, {}


def make_transport(name: str, part: Partition) -> InProcessTransport:
    regions = list(part.regions)
    if name == "inproc":
        return InProcessTransport(regions)
    if name == "socket":
        routes = {i: (t.region_a, t.region_b) for i, t in enumerate(part.ties)}
        return SocketTransport(regions, routes)
    raise TransportError("unknown transport '{}'", name)
