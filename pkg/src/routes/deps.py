"""
Values shared by every sub-command group: the network document, the caller's identity,
a client bound to them, and the result envelope.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path
from typing import Any, NamedTuple, Optional

from src.database.db import make_session_factory
from src.exceptions import ConfigError, DbcAbacError, Unauthorized
from src.schemas import NetworkConfig, ObjectRef, Operation
from src.services import canonical
from src.services.client import Client
from src.services.identity import CertificateAuthority, load_identity
from src.services.network import load_config

OPERATIONS = {'read': Operation.read, 'write': Operation.write}


class Reply(NamedTuple):
    """Handler result: the envelope payload plus an optional human rendering."""
    payload: Any
    text: Optional[str] = None


def network_config(args: argparse.Namespace) -> NetworkConfig:
    return load_config(Path(args.config))


def identity_of(args: argparse.Namespace, default: Optional[Path] = None):
    path = args.identity or default
    if path is None:
        raise Unauthorized('this command needs an enrolled identity (--identity)')
    return load_identity(Path(path))


def client_of(args: argparse.Namespace, default_identity: Optional[Path] = None) -> Client:
    return Client(network_config(args), identity_of(args, default_identity), transport=args.transport)


def authority_of(args: argparse.Namespace, org_id: str) -> CertificateAuthority:
    config = network_config(args)
    ca_config = config.ca_for_org(org_id)
    if ca_config is None:
        raise ConfigError(f'no CA for organization {org_id}')
    return CertificateAuthority.load(ca_config, make_session_factory(config.registry_database_url))


def object_ref(args: argparse.Namespace) -> ObjectRef:
    return ObjectRef(device_id=args.device, domain_id=args.domain)


def read_document(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as err:
        raise ConfigError(f'cannot read document {path}: {err}')


def add_object_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--device', required=True, help='device id of the object')
    parser.add_argument('--domain', required=True, help='domain holding the object')


def success(result: Any) -> Reply:
    return result if isinstance(result, Reply) else Reply(result)


def render(reply: Reply, output: str) -> str:
    """
    The render function formats a successful result for the terminal.

    :param reply: Reply: Handler result
    :param output: str: human or json
    :return: The text to print
    """
    if output == 'json':
        return canonical.dumps_str({'status': 'ok', 'payload': reply.payload})
    if reply.text is not None:
        return reply.text
    if isinstance(reply.payload, str):
        return reply.payload
    return json.dumps(canonical.to_document(reply.payload), indent=2, sort_keys=True, ensure_ascii=False)


def render_error(err: DbcAbacError, output: str) -> str:
    if output == 'json':
        return canonical.dumps_str({'status': 'error', 'error': err.to_envelope()})
    return err.message if err.message.startswith('reject: ') else f'{err.code}: {err.message}'
