"""
Framed message transport between CLI clients and edges, and between edges.

Frame: 4-byte big-endian length followed by the canonical bytes of a WireMessage.
One request and one reply per connection.
"""
from __future__ import annotations

import asyncio
import errno
import logging
import struct
from collections.abc import Awaitable, Callable
from typing import Optional, Protocol

from pydantic import ValidationError

from src.conf.config import settings
from src.exceptions import DbcAbacError, PortInUse, TransportError, from_code
from src.schemas import MessageType, WireMessage
from src.services import canonical

logger = logging.getLogger(__name__)

HEADER = struct.Struct('>I')

Handler = Callable[[WireMessage], Awaitable[WireMessage]]


def encode(message: WireMessage, max_frame_bytes: Optional[int] = None) -> bytes:
    body = canonical.dumps(message)
    if len(body) > (max_frame_bytes or settings.max_frame_bytes):
        raise TransportError(f'{message.type.value} frame of {len(body)} bytes exceeds the frame limit')
    return HEADER.pack(len(body)) + body


def decode(body: bytes) -> WireMessage:
    try:
        return WireMessage.parse_raw(body)
    except (ValidationError, ValueError) as err:
        raise TransportError(f'malformed frame: {err}')


async def read_message(reader: asyncio.StreamReader, max_frame_bytes: Optional[int] = None) -> WireMessage:
    """
    The read_message function reads one frame from a stream.

    :param reader: asyncio.StreamReader: Connection reader
    :param max_frame_bytes: Optional[int]: Largest accepted body
    :return: The decoded message
    """
    header = await reader.readexactly(HEADER.size)
    (length,) = HEADER.unpack(header)
    if length > (max_frame_bytes or settings.max_frame_bytes):
        raise TransportError(f'announced frame of {length} bytes exceeds the frame limit')
    return decode(await reader.readexactly(length))


async def write_message(writer: asyncio.StreamWriter, message: WireMessage) -> None:
    writer.write(encode(message))
    await writer.drain()


def error_message(err: DbcAbacError) -> WireMessage:
    return WireMessage(type=MessageType.error, body=err.to_envelope())


def expect(reply: WireMessage, expected: MessageType) -> dict:
    """
    The expect function unwraps a reply, re-raising a remote error as its own exception class.

    :param reply: WireMessage: Reply received
    :param expected: MessageType: Reply type of a successful request
    :return: The reply body
    """
    if reply.type == MessageType.error:
        raise from_code(str(reply.body.get('code')), str(reply.body.get('message', '')))
    if reply.type != expected:
        raise TransportError(f'expected {expected.value}, got {reply.type.value}')
    return reply.body


async def dispatch(handler: Handler, message: WireMessage) -> WireMessage:
    try:
        return await handler(message)
    except DbcAbacError as err:
        return error_message(err)
    except Exception as err:
        logger.exception('handler failed on %s', message.type.value)
        return WireMessage(type=MessageType.error, body={'code': 'InternalError', 'message': str(err)})


class Transport(Protocol):
    async def request(self, endpoint: str, message: WireMessage) -> WireMessage:
        ...


class TcpTransport:
    """Opens one connection per request."""

    def __init__(self, timeout: Optional[float] = None):
        self.timeout = timeout or settings.request_timeout_s

    async def request(self, endpoint: str, message: WireMessage) -> WireMessage:
        host, _, port = endpoint.rpartition(':')
        try:
            reader, writer = await asyncio.wait_for(asyncio.open_connection(host, int(port)), self.timeout)
        except (OSError, ValueError, asyncio.TimeoutError) as err:
            raise TransportError(f'cannot reach {endpoint}: {err or type(err).__name__}')
        try:
            await write_message(writer, message)
            return await asyncio.wait_for(read_message(reader), self.timeout)
        except (OSError, asyncio.IncompleteReadError, asyncio.TimeoutError) as err:
            raise TransportError(f'{message.type.value} to {endpoint} failed: {err or type(err).__name__}')
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except OSError:
                pass


class LoopbackTransport:
    """In-process transport: frames are encoded and decoded, but never leave the process."""

    def __init__(self):
        self._handlers: dict[str, Handler] = {}

    def register(self, endpoint: str, handler: Handler) -> None:
        self._handlers[endpoint] = handler

    def unregister(self, endpoint: str) -> None:
        self._handlers.pop(endpoint, None)

    async def request(self, endpoint: str, message: WireMessage) -> WireMessage:
        handler = self._handlers.get(endpoint)
        if handler is None:
            raise TransportError(f'cannot reach {endpoint}: nothing listening')
        received = decode(encode(message)[HEADER.size:])
        reply = await dispatch(handler, received)
        return decode(encode(reply)[HEADER.size:])


class MessageServer:
    """Serves framed requests on one TCP endpoint."""

    def __init__(self, host: str, port: int, handler: Handler):
        self.host = host
        self.port = port
        self.handler = handler
        self._server: Optional[asyncio.AbstractServer] = None

    async def start(self) -> None:
        try:
            self._server = await asyncio.start_server(self._serve, self.host, self.port)
        except OSError as err:
            if err.errno == errno.EADDRINUSE:
                raise PortInUse(f'{self.host}:{self.port} is already in use')
            raise TransportError(f'cannot listen on {self.host}:{self.port}: {err}')
        logger.info('listening on %s:%d', self.host, self.port)

    async def _serve(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            try:
                message = await read_message(reader)
            except TransportError as err:
                reply = error_message(err)
            else:
                reply = await dispatch(self.handler, message)
            await write_message(writer, reply)
        except (OSError, asyncio.IncompleteReadError) as err:
            logger.warning('connection dropped: %s', err)
        except TransportError as err:
            logger.warning('reply not sent: %s', err)
        finally:
            writer.close()

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None
