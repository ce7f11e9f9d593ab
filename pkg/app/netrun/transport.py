"""Byte links (TCP streams or an in-process loopback) and the framed connection on top."""
from __future__ import annotations

import asyncio
import logging
from typing import List, Optional, Protocol, Tuple

from app.netrun.wire import LENGTH, Message, check_length, decode, encode

logger = logging.getLogger(__name__)


class PeerClosed(ConnectionError):
    pass


class Link(Protocol):
    async def send(self, data: bytes) -> None: ...

    async def recv_exactly(self, n: int) -> bytes: ...

    async def close(self) -> None: ...


class StreamLink:
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.reader = reader
        self.writer = writer

    async def send(self, data: bytes) -> None:
        self.writer.write(data)
        await self.writer.drain()

    async def recv_exactly(self, n: int) -> bytes:
        try:
            return await self.reader.readexactly(n)
        except asyncio.IncompleteReadError as e:
            raise PeerClosed(f"peer closed after {len(e.partial)} of {n} bytes") from e

    async def close(self) -> None:
        if self.writer.is_closing():
            return
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except ConnectionError:
            pass


class QueueLink:
    """One end of an in-process byte pipe; `None` on the queue marks end of stream."""

    def __init__(self, inbox: asyncio.Queue, outbox: asyncio.Queue):
        self.inbox = inbox
        self.outbox = outbox
        self.buffer = bytearray()
        self.eof = False
        self.closed = False

    async def send(self, data: bytes) -> None:
        if self.closed:
            raise PeerClosed("link already closed")
        await self.outbox.put(bytes(data))

    async def recv_exactly(self, n: int) -> bytes:
        while len(self.buffer) < n:
            if self.eof:
                raise PeerClosed(f"peer closed after {len(self.buffer)} of {n} bytes")
            chunk = await self.inbox.get()
            if chunk is None:
                self.eof = True
                continue
            self.buffer += chunk
        data = bytes(self.buffer[:n])
        del self.buffer[:n]
        return data

    async def close(self) -> None:
        if not self.closed:
            self.closed = True
            await self.outbox.put(None)


def loopback_pair() -> Tuple[QueueLink, QueueLink]:
    a_to_b: asyncio.Queue = asyncio.Queue()
    b_to_a: asyncio.Queue = asyncio.Queue()
    return QueueLink(b_to_a, a_to_b), QueueLink(a_to_b, b_to_a)


class FrameConnection:
    """Framed messages over a link; every frame sent or received is kept in `transcript`."""

    def __init__(self, link: Link, name: str = "peer"):
        self.link = link
        self.name = name
        self.transcript: List[Tuple[str, bytes]] = []

    async def send(self, msg: Message) -> None:
        await self.send_frame(encode(msg))

    async def send_frame(self, frame: bytes) -> None:
        self.transcript.append(("send", frame))
        await self.link.send(frame)

    async def recv_frame(self) -> bytes:
        header = await self.link.recv_exactly(LENGTH.size)
        (length,) = LENGTH.unpack(header)
        check_length(length)
        frame = header + await self.link.recv_exactly(length)
        self.transcript.append(("recv", frame))
        return frame

    async def recv(self) -> Message:
        return decode(await self.recv_frame())

    async def close(self) -> None:
        await self.link.close()


def parse_endpoint(text: str) -> Tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {text!r}")
    return host, int(port)


async def connect(endpoint: str, retries: int = 50, delay: float = 0.1) -> StreamLink:
    host, port = parse_endpoint(endpoint)
    last: Optional[OSError] = None
    for _ in range(retries):
        try:
            reader, writer = await asyncio.open_connection(host, port)
            logger.info("connected endpoint=%s", endpoint)
            return StreamLink(reader, writer)
        except OSError as e:
            last = e
            await asyncio.sleep(delay)
    raise PeerClosed(f"could not connect to {endpoint}: {last}")


async def accept_one(endpoint: str) -> StreamLink:
    """Listen on `endpoint` and return the first connection."""
    host, port = parse_endpoint(endpoint)
    accepted: asyncio.Future = asyncio.get_running_loop().create_future()

    async def on_client(reader, writer):
        if not accepted.done():
            accepted.set_result(StreamLink(reader, writer))
        else:
            writer.close()

    server = await asyncio.start_server(on_client, host, port)
    logger.info("listening endpoint=%s", endpoint)
    try:
        return await accepted
    finally:
        server.close()
