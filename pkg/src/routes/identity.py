import argparse
from pathlib import Path

from src.routes.deps import Reply, authority_of, identity_of
from src.schemas import RoleClass, SubjectAttributes
from src.services.identity import save_identity


def enroll_admin(args: argparse.Namespace) -> Reply:
    """
    The enroll_admin function enrolls the registrar of an organization's CA with its bootstrap secret.

    :param args: argparse.Namespace: --org, --secret and --out
    :return: The identity file written
    """
    ca = authority_of(args, args.org)
    admin = ca.enroll_admin(args.id, args.secret)
    save_identity(admin, args.out)
    return Reply({'subject_id': admin.certificate.subject_id, 'identity': str(args.out)},
                 f'{admin.certificate.subject_id} enrolled, identity written to {args.out}')


def register_identity(args: argparse.Namespace) -> Reply:
    registrar = identity_of(args)
    ca = authority_of(args, args.org)
    attributes = SubjectAttributes(user_id=args.id, role=args.role, domain_id=args.domain)
    secret = ca.register(registrar.certificate, args.id, RoleClass(args.role_class), attributes)
    return Reply({'subject_id': args.id, 'secret': secret},
                 f'{args.id} registered at {ca.ca_id}\nenrollment secret (shown once): {secret}')


def enroll(args: argparse.Namespace) -> Reply:
    identity = authority_of(args, args.org).enroll(args.id, args.secret)
    save_identity(identity, args.out)
    return Reply({'subject_id': args.id, 'serial': identity.certificate.serial, 'identity': str(args.out)},
                 f'{args.id} enrolled, identity written to {args.out}')


def register(subparsers) -> None:
    parser = subparsers.add_parser('identity', help='CA workflows: enroll admin, register, enroll')
    commands = parser.add_subparsers(dest='command', required=True)

    cmd = commands.add_parser('enroll-admin', help='enroll the registrar of a CA')
    cmd.add_argument('--org', required=True)
    cmd.add_argument('--id', default='admin', help='registrar id')
    cmd.add_argument('--secret', required=True, help='bootstrap secret printed by net init')
    cmd.add_argument('--out', type=Path, required=True, help='identity file to write')
    cmd.set_defaults(handler=enroll_admin)

    cmd = commands.add_parser('register', help='register an identity (registrar identity required)')
    cmd.add_argument('--org', required=True)
    cmd.add_argument('--id', required=True)
    cmd.add_argument('--role-class', required=True, choices=[r.value for r in RoleClass])
    cmd.add_argument('--role', required=True, help='role attribute, e.g. doctor')
    cmd.add_argument('--domain', required=True, help='domain attribute')
    cmd.set_defaults(handler=register_identity)

    cmd = commands.add_parser('enroll', help='exchange an enrollment secret for a certificate')
    cmd.add_argument('--org', required=True)
    cmd.add_argument('--id', required=True)
    cmd.add_argument('--secret', required=True)
    cmd.add_argument('--out', type=Path, required=True, help='identity file to write')
    cmd.set_defaults(handler=enroll)
