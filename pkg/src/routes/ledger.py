import argparse
from pathlib import Path
from typing import Optional

from src.exceptions import BrokenChain, ConfigError
from src.repository.archive import BlockArchive
from src.routes.deps import Reply, network_config
from src.schemas import Block, NetworkConfig
from src.services import canonical
from src.services.ledger import verify_blocks


def archive_of(config: NetworkConfig, peer_id: Optional[str]) -> BlockArchive:
    archives = {d.peer_id: d.archive_path for d in config.domains}
    archives[config.orderer_id] = config.orderer_archive_path
    peer_id = peer_id or config.domains[0].peer_id
    if peer_id not in archives:
        raise ConfigError(f'no ledger for {peer_id}; known: {", ".join(sorted(archives))}')
    if not archives[peer_id].exists():
        raise ConfigError(f'ledger of {peer_id} not found at {archives[peer_id]}')
    return BlockArchive(archives[peer_id])


def checked_blocks(archive: BlockArchive) -> list[Block]:
    """
    The checked_blocks function reads an archive and recomputes every hash and link.

    :param archive: BlockArchive: Archive to read
    :return: The blocks of an intact chain
    """
    blocks, bad_record = archive.scan()
    broken = verify_blocks(blocks)
    if broken is None and bad_record is not None:
        broken = bad_record
    if broken is not None:
        raise BrokenChain(f'{archive.path} is broken at height {broken}', height=broken)
    return blocks


def export(args: argparse.Namespace) -> Reply:
    blocks = checked_blocks(archive_of(network_config(args), args.peer))
    document = canonical.to_document(blocks)
    if args.out is None:
        return Reply(document)
    args.out.write_text(canonical.dumps_str(blocks), encoding='utf-8')
    return Reply({'blocks': len(blocks), 'out': str(args.out)}, f'{len(blocks)} blocks written to {args.out}')


def verify(args: argparse.Namespace) -> Reply:
    blocks = checked_blocks(archive_of(network_config(args), args.peer))
    return Reply({'ok': True, 'height': len(blocks)}, f'chain intact, height {len(blocks)}')


def info(args: argparse.Namespace) -> Reply:
    archive = archive_of(network_config(args), args.peer)
    blocks, _ = archive.scan()
    head = blocks[-1].block_hash if blocks else canonical.ZERO_HASH
    return Reply({'peer': args.peer or archive.path.stem, 'height': len(blocks), 'head_hash': head},
                 f'height {len(blocks)}, head {head}')


def register(subparsers) -> None:
    parser = subparsers.add_parser('ledger', help='offline audit of block archives')
    commands = parser.add_subparsers(dest='command', required=True)

    for name, handler, help_text in (('export', export, 'print or write the chain as a document array'),
                                     ('verify', verify, 'recompute every block hash and link'),
                                     ('info', info, 'height and head hash')):
        cmd = commands.add_parser(name, help=help_text)
        cmd.add_argument('--peer', help='peer or orderer id, first domain peer by default')
        if name == 'export':
            cmd.add_argument('--out', type=Path, help='file receiving the document array')
        cmd.set_defaults(handler=handler)
