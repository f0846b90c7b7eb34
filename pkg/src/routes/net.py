import argparse
import asyncio
import logging
import os
import signal
from pathlib import Path

from src.conf.config import settings
from src.exceptions import NetworkError
from src.routes.deps import Reply, network_config
from src.schemas import NetworkConfig
from src.services.network import PID_NAME, Network, init_network, load_topology, network_dir_of, ping_all
from src.services.transport import TcpTransport

logger = logging.getLogger(__name__)


def init(args: argparse.Namespace) -> Reply:
    """
    The init function generates a network from a topology document.
    The registrar secrets are printed here once and stored nowhere in plain text.

    :param args: argparse.Namespace: --topology and --dir
    :return: The network document path and the bootstrap secrets
    """
    config, secrets = init_network(load_topology(args.topology), Path(args.dir))
    path = Path(args.dir) / 'network.json'
    lines = [f'network written to {path}', 'registrar bootstrap secrets (shown once):']
    lines += [f'  {ca_id}: {secret}' for ca_id, secret in sorted(secrets.items())]
    return Reply({'config': str(path), 'channel': config.channel, 'secrets': secrets}, '\n'.join(lines))


async def serve(config: NetworkConfig) -> int:
    network = Network(config, transport=TcpTransport())
    await network.start()
    pid_path = network_dir_of(config) / PID_NAME
    pid_path.write_text(str(os.getpid()), encoding='utf-8')
    stopping = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGTERM, signal.SIGINT):
        loop.add_signal_handler(sig, stopping.set)
    logger.info('network running with %d edges, pid %d', len(network.edges), os.getpid())
    try:
        await stopping.wait()
    finally:
        await network.stop()
        pid_path.unlink(missing_ok=True)
    return network.sequencer.height


def start(args: argparse.Namespace) -> Reply:
    height = asyncio.run(serve(network_config(args)))
    return Reply({'stopped': True, 'height': height}, f'network stopped at height {height}')


def stop(args: argparse.Namespace) -> Reply:
    pid_path = network_dir_of(network_config(args)) / PID_NAME
    try:
        pid = int(pid_path.read_text(encoding='utf-8'))
        os.kill(pid, signal.SIGTERM)
    except (OSError, ValueError) as err:
        raise NetworkError(f'network is not running: {err}')
    return Reply({'pid': pid}, f'stop signal sent to {pid}')


def status(args: argparse.Namespace) -> dict:
    return asyncio.run(ping_all(network_config(args), args.transport))


def register(subparsers) -> None:
    parser = subparsers.add_parser('net', help='network bootstrap and lifecycle')
    commands = parser.add_subparsers(dest='command', required=True)

    cmd = commands.add_parser('init', help='generate CAs, identities, genesis ledgers and the network document')
    cmd.add_argument('--topology', type=Path, required=True, help='topology document')
    cmd.add_argument('--dir', type=Path, default=settings.network_dir, help='output directory')
    cmd.set_defaults(handler=init)

    cmd = commands.add_parser('start', help='run the sequencer and every domain edge in the foreground')
    cmd.set_defaults(handler=start)

    cmd = commands.add_parser('stop', help='stop a running network')
    cmd.set_defaults(handler=stop)

    cmd = commands.add_parser('status', help='ping every edge')
    cmd.set_defaults(handler=status)
