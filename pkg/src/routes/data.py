import argparse
import asyncio
from pathlib import Path

from src.exceptions import ConfigError, UnknownDomain
from src.routes.deps import Reply, add_object_options, client_of, network_config, object_ref


def ingest(args: argparse.Namespace) -> Reply:
    """
    The ingest function stores a device payload at a domain's edge and records its hash on chain.
    Without --identity the gateway identity of the domain is used.

    :param args: argparse.Namespace: --domain, --device, --type and --file
    :return: The content hash
    """
    domain = network_config(args).domain(args.domain)
    if domain is None:
        raise UnknownDomain(f'no edge for domain {args.domain}')
    try:
        payload = args.file.read_bytes()
    except OSError as err:
        raise ConfigError(f'cannot read {args.file}: {err}')
    client = client_of(args, domain.identity_path)
    content_hash = asyncio.run(client.ingest(payload, args.device, args.type))
    return Reply({'content_hash': content_hash}, content_hash)


def get(args: argparse.Namespace) -> Reply:
    client = client_of(args)
    payload, content_hash = asyncio.run(client.get_data(object_ref(args), args.client_ip))
    args.out.write_bytes(payload)
    return Reply({'content_hash': content_hash, 'bytes': len(payload), 'out': str(args.out)},
                 f'{len(payload)} bytes written to {args.out} ({content_hash})')


def register(subparsers) -> None:
    parser = subparsers.add_parser('data', help='device data: ingest and retrieval')
    commands = parser.add_subparsers(dest='command', required=True)

    cmd = commands.add_parser('ingest', help='store a payload and record its hash')
    add_object_options(cmd)
    cmd.add_argument('--type', required=True, help='data type, e.g. temperature')
    cmd.add_argument('--file', type=Path, required=True, help='payload file')
    cmd.set_defaults(handler=ingest)

    cmd = commands.add_parser('get', help='request the latest payload of a device')
    add_object_options(cmd)
    cmd.add_argument('--client-ip', default='127.0.0.1')
    cmd.add_argument('--out', type=Path, required=True, help='file receiving the payload')
    cmd.set_defaults(handler=get)
