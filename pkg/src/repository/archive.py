"""
Append-only block archive: a file of length-prefixed canonical block records.
"""
from __future__ import annotations

import logging
import os
import struct
import threading
from collections.abc import Iterator
from pathlib import Path

from pydantic import ValidationError

from src.schemas import Block
from src.services import canonical

logger = logging.getLogger(__name__)

HEADER = struct.Struct('>I')


class BlockArchive:
    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch(exist_ok=True)
        self._lock = threading.Lock()

    def append(self, block: Block) -> None:
        """
        The append function writes one block record and flushes it to disk.

        :param block: Block: A committed block
        :return: None
        """
        data = canonical.dumps(block)
        with self._lock, open(self.path, 'ab') as fh:
            fh.write(HEADER.pack(len(data)) + data)
            fh.flush()
            os.fsync(fh.fileno())

    def records(self) -> Iterator[bytes]:
        """
        The records function yields the raw record bodies in file order.
        A truncated record ends the iteration with ValueError.

        :return: Raw canonical bytes of each record
        """
        with self._lock:
            raw = self.path.read_bytes()
        offset = 0
        while offset < len(raw):
            if offset + HEADER.size > len(raw):
                raise ValueError(f'truncated header at byte {offset}')
            (length,) = HEADER.unpack_from(raw, offset)
            offset += HEADER.size
            if offset + length > len(raw):
                raise ValueError(f'truncated record at byte {offset}')
            yield raw[offset:offset + length]
            offset += length

    def scan(self) -> tuple[list[Block], int | None]:
        """
        The scan function parses every record and stops at the first one that is not a
        well-formed canonical block. A record only counts as well formed when serializing
        the parsed block again reproduces its bytes exactly.

        :return: The parsed blocks and the index of the first bad record, or None
        """
        blocks: list[Block] = []
        try:
            for index, data in enumerate(self.records()):
                try:
                    block = Block.parse_raw(data)
                except (ValidationError, ValueError):
                    return blocks, index
                if canonical.dumps(block) != data:
                    return blocks, index
                blocks.append(block)
        except ValueError as err:
            logger.warning('%s: %s', self.path, err)
            return blocks, len(blocks)
        return blocks, None

    def __len__(self) -> int:
        try:
            return sum(1 for _ in self.records())
        except ValueError:
            return 0
