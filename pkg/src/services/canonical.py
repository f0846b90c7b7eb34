"""
Canonical document form: sorted keys, no insignificant whitespace, utf-8.

Every hash and every signature in the project is taken over this form.
"""
import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import BaseModel

ZERO_HASH = '0' * 64


def _default(obj: Any):
    if isinstance(obj, BaseModel):
        return obj.dict()
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f'{type(obj).__name__} has no canonical form')


def to_document(obj: Any) -> Any:
    """
    The to_document function converts models, enums and tuples into plain JSON-compatible values.

    :param obj: Any: Model or value to convert
    :return: The plain document
    """
    return json.loads(dumps(obj))


def dumps(obj: Any) -> bytes:
    """
    The dumps function serializes a value into its canonical bytes.

    :param obj: Any: Model, mapping or scalar
    :return: Canonical utf-8 bytes
    """
    if isinstance(obj, BaseModel):
        obj = obj.dict()
    return json.dumps(obj, sort_keys=True, separators=(',', ':'), ensure_ascii=False,
                      default=_default).encode('utf-8')


def dumps_str(obj: Any) -> str:
    return dumps(obj).decode('utf-8')


def loads(data: bytes | str) -> Any:
    return json.loads(data)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest(obj: Any) -> str:
    """
    The digest function hashes the canonical form of a value.

    :param obj: Any: Value to hash
    :return: Hex SHA-256 of the canonical bytes
    """
    return sha256_hex(dumps(obj))
