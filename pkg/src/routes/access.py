import argparse
import asyncio

from src.exceptions import AccessRejected
from src.routes.deps import OPERATIONS, Reply, add_object_options, client_of, object_ref
from src.schemas import ContractName, Verdict
from src.services import canonical


def check(args: argparse.Namespace) -> Reply:
    """
    The check function asks the access contract for a decision on one object.
    A reject is reported as AccessRejected with the decision's reason.

    :param args: argparse.Namespace: --device, --domain, --op and --client-ip
    :return: The decision
    """
    client = client_of(args)
    decision = asyncio.run(client.check_access(object_ref(args), OPERATIONS[args.op], args.client_ip))
    if decision.verdict == Verdict.reject:
        raise AccessRejected(decision.reason.value)
    return Reply(canonical.to_document(decision), 'approve')


def delegate(args: argparse.Namespace) -> bool:
    client = client_of(args)
    return asyncio.run(client.invoke(ContractName.access, 'DelegateAccess', [args.key, args.user]))


def revoke(args: argparse.Namespace) -> bool:
    client = client_of(args)
    return asyncio.run(client.invoke(ContractName.access, 'RevokeAccess', [args.key, OPERATIONS[args.op].value]))


def attributes(args: argparse.Namespace) -> dict:
    client = client_of(args)
    body = {'object_ref': object_ref(args).dict(), 'operation': OPERATIONS[args.op].value,
            'client_ip': args.client_ip}
    return asyncio.run(client.invoke(ContractName.access, 'GetAtts', [body]))


def register(subparsers) -> None:
    parser = subparsers.add_parser('access', help='access decisions, delegation and revocation (AccessContract)')
    commands = parser.add_subparsers(dest='command', required=True)

    cmd = commands.add_parser('check', help='request an access decision')
    add_object_options(cmd)
    cmd.add_argument('--op', choices=sorted(OPERATIONS), default='read')
    cmd.add_argument('--client-ip', default='127.0.0.1')
    cmd.set_defaults(handler=check)

    cmd = commands.add_parser('attributes', help='show the request the contract builds for the caller')
    add_object_options(cmd)
    cmd.add_argument('--op', choices=sorted(OPERATIONS), default='read')
    cmd.add_argument('--client-ip', default='127.0.0.1')
    cmd.set_defaults(handler=attributes)

    cmd = commands.add_parser('delegate', help='add an owner to a policy (owner or local admin)')
    cmd.add_argument('--key', required=True)
    cmd.add_argument('--user', required=True, help='enrolled user id of the new owner')
    cmd.set_defaults(handler=delegate)

    cmd = commands.add_parser('revoke', help='switch an operation off in a policy (owner or local admin)')
    cmd.add_argument('--key', required=True)
    cmd.add_argument('--op', choices=sorted(OPERATIONS), required=True)
    cmd.set_defaults(handler=revoke)
