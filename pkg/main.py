import argparse
import logging
import sys
from typing import Optional, Sequence

from src.conf.config import configure_logging, settings
from src.exceptions import EXIT_OK, DbcAbacError
from src.routes import access, bench, data, identity, ledger, net, policy
from src.routes.deps import render, render_error, success
from src.services.transport import Transport

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """
    The build_parser function assembles the command line: global options plus one
    sub-command group per resource.

    :return: The root parser
    """
    parser = argparse.ArgumentParser(prog='dbc-abac', description='Distributed ABAC for IoT data')
    parser.add_argument('--config', default=str(settings.network_config), help='network document')
    parser.add_argument('--identity', help='identity file of the caller')
    parser.add_argument('--output', choices=['human', 'json'], default='human')
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR')
    subparsers = parser.add_subparsers(dest='group', required=True)
    for group in (net, identity, policy, access, data, ledger, bench):
        group.register(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None, transport: Optional[Transport] = None) -> int:
    """
    The main function runs one command and prints its result envelope.

    :param argv: Optional[Sequence[str]]: Arguments, sys.argv when omitted
    :param transport: Optional[Transport]: Transport to the edges, TCP when omitted
    :return: The process exit code
    """
    args = build_parser().parse_args(argv)
    args.transport = transport
    configure_logging(args.log_level)
    try:
        reply = success(args.handler(args))
    except DbcAbacError as err:
        logger.debug('%s failed: %s', args.group, err)
        print(render_error(err, args.output), file=sys.stdout if args.output == 'json' else sys.stderr)
        return err.exit_code
    print(render(reply, args.output))
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
