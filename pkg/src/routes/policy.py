import argparse
import asyncio
from pathlib import Path

from src.exceptions import ConfigError
from src.routes.deps import Reply, client_of, read_document
from src.schemas import ContractName, PolicySelector


def _invoke(args: argparse.Namespace, function: str, *fn_args):
    client = client_of(args)
    return asyncio.run(client.invoke(ContractName.policy, function, fn_args))


def add(args: argparse.Namespace) -> Reply:
    key = _invoke(args, 'AddPolicy', read_document(args.file))
    return Reply(key, key)


def update(args: argparse.Namespace) -> bool:
    return _invoke(args, 'UpdatePolicy', args.key, read_document(args.file))


def delete(args: argparse.Namespace) -> bool:
    return _invoke(args, 'DeletePolicy', args.key)


def selector_of(args: argparse.Namespace) -> PolicySelector:
    if args.key:
        return PolicySelector.by_key(args.key)
    if args.user:
        return PolicySelector.by_subject(args.user)
    if args.device and args.domain:
        return PolicySelector.by_object(args.domain, args.device)
    raise ConfigError('query needs --key, --user, or both --device and --domain')


def query(args: argparse.Namespace) -> list:
    return _invoke(args, 'QueryPolicy', selector_of(args))


def validate(args: argparse.Namespace) -> Reply:
    result = _invoke(args, 'ValidatePolicy', read_document(args.file))
    text = 'valid' if result['ok'] else '\n'.join(['invalid:'] + [f'  {v}' for v in result['violations']])
    return Reply(result, text)


def register(subparsers) -> None:
    parser = subparsers.add_parser('policy', help='policy administration (PolicyContract)')
    commands = parser.add_subparsers(dest='command', required=True)

    cmd = commands.add_parser('add', help='add a policy (local admin of its domain)')
    cmd.add_argument('-f', '--file', type=Path, required=True, help='policy document')
    cmd.set_defaults(handler=add)

    cmd = commands.add_parser('update', help='replace the policy stored at a key')
    cmd.add_argument('--key', required=True)
    cmd.add_argument('-f', '--file', type=Path, required=True, help='policy document')
    cmd.set_defaults(handler=update)

    cmd = commands.add_parser('delete', help='delete the policy stored at a key')
    cmd.add_argument('--key', required=True)
    cmd.set_defaults(handler=delete)

    cmd = commands.add_parser('query', help='list live policies by object, subject or key')
    cmd.add_argument('--device')
    cmd.add_argument('--domain')
    cmd.add_argument('--user')
    cmd.add_argument('--key')
    cmd.set_defaults(handler=query)

    cmd = commands.add_parser('validate', help='check a policy document without storing it')
    cmd.add_argument('-f', '--file', type=Path, required=True, help='policy document')
    cmd.set_defaults(handler=validate)
