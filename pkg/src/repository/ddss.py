"""
Content-addressed payload store: one file per SHA-256 hex digest under the store root.
"""
from __future__ import annotations

import logging
import os
import re
import tempfile
import threading
from pathlib import Path

from src.exceptions import DataNotFound, HashMismatch
from src.services import canonical

logger = logging.getLogger(__name__)

HEX_DIGEST = re.compile(r'^[0-9a-f]{64}$')
LOCK_STRIPES = 64


class DdssStore:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks = tuple(threading.Lock() for _ in range(LOCK_STRIPES))

    def lock_for(self, content_hash: str) -> threading.Lock:
        return self._locks[int(content_hash[:8], 16) % LOCK_STRIPES]

    def path_for(self, content_hash: str) -> Path:
        if not HEX_DIGEST.match(content_hash):
            raise DataNotFound(f'not a content hash: {content_hash!r}')
        return self.root / content_hash

    def put(self, payload: bytes) -> str:
        """
        The put function stores a payload under its hash.
        The file is written to a temporary name first and renamed into place.

        :param payload: bytes: Raw payload, may be empty
        :return: Hex SHA-256 of the payload
        """
        content_hash = canonical.sha256_hex(payload)
        path = self.path_for(content_hash)
        with self.lock_for(content_hash):
            if path.exists() and canonical.sha256_hex(path.read_bytes()) == content_hash:
                return content_hash
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix='.tmp-')
            try:
                with os.fdopen(fd, 'wb') as fh:
                    fh.write(payload)
                os.replace(tmp, path)
            except OSError:
                Path(tmp).unlink(missing_ok=True)
                raise
        logger.debug('stored %s (%d bytes)', content_hash, len(payload))
        return content_hash

    def get(self, content_hash: str) -> bytes:
        """
        The get function reads a payload and checks it against its hash.

        :param content_hash: str: Hex SHA-256 of the payload
        :return: The payload bytes
        """
        path = self.path_for(content_hash)
        try:
            payload = path.read_bytes()
        except FileNotFoundError:
            raise DataNotFound(f'no payload stored for {content_hash}')
        if canonical.sha256_hex(payload) != content_hash:
            logger.error('stored payload %s is corrupted', content_hash)
            raise HashMismatch(f'stored payload does not match {content_hash}')
        return payload

    def exists(self, content_hash: str) -> bool:
        return HEX_DIGEST.match(content_hash) is not None and (self.root / content_hash).is_file()

    def hashes(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if HEX_DIGEST.match(p.name))
