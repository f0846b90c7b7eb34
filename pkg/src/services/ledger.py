"""
Ledger replica: versioned world state, the simulation context handed to contracts,
and a peer that simulates, endorses, validates and commits hash-chained blocks.
"""
from __future__ import annotations

import logging
import threading
import time
from collections.abc import Callable, Iterable, Sequence
from typing import Any, Optional, Protocol, Union

from src.conf.config import settings
from src.exceptions import BadCertificate, BrokenChain, ClockSkew, MalformedRequest, StateAccessOutsideSimulation
from src.repository.archive import BlockArchive
from src.schemas import (Block, Endorsement, EndorsementPolicy, Identity, IdentityCertificate, Proposal,
                         ProposalResponse, ReadItem, RoleClass, SimulationResult, Transaction, TxValidationCode,
                         Version, WorldStateEntry, WriteItem)
from src.services import canonical, crypto
from src.services.identity import MembershipService

logger = logging.getLogger(__name__)


def transaction_id(tx: Union[Proposal, Transaction]) -> str:
    """
    The transaction_id function derives the content hash identifying a proposal.

    :param tx: Proposal | Transaction: Proposal fields (creator, contract, function, args, timestamp, nonce)
    :return: Hex SHA-256 over the canonical form of those fields
    """
    return canonical.digest(tx.dict(include={'creator', 'contract', 'function', 'args', 'timestamp', 'nonce'}))


def proposal_payload(proposal: Proposal) -> bytes:
    return canonical.dumps(proposal.dict(exclude={'signature'}))


def endorsement_payload(tx_id: str, simulation: SimulationResult) -> bytes:
    return canonical.dumps({'tx_id': tx_id, **simulation.dict()})


def block_digest(block: Block) -> str:
    return canonical.digest({'height': block.height, 'prev_hash': block.prev_hash, 'timestamp': block.timestamp,
                             'txs': list(block.txs), 'validity': list(block.validity)})


def seal(block: Block) -> Block:
    return block.copy(update={'block_hash': block_digest(block)})


def genesis_block() -> Block:
    return seal(Block(height=0, prev_hash=canonical.ZERO_HASH))


def verify_blocks(blocks: Sequence[Block]) -> Optional[int]:
    """
    The verify_blocks function recomputes every block hash and link of a chain.

    :param blocks: Sequence[Block]: The chain, genesis first
    :return: The first broken height, or None when the chain is intact
    """
    prev_hash = canonical.ZERO_HASH
    for index, block in enumerate(blocks):
        if (block.height != index or block.prev_hash != prev_hash or len(block.validity) != len(block.txs)
                or block.block_hash != block_digest(block)):
            return index
        prev_hash = block.block_hash
    return None


class WorldState:
    """Current value and version of every key. Deleted keys stay as tombstones."""

    def __init__(self):
        self._entries: dict[str, WorldStateEntry] = {}

    def get(self, key: str) -> Optional[WorldStateEntry]:
        return self._entries.get(key)

    def put_entry(self, entry: WorldStateEntry) -> None:
        self._entries[entry.key] = entry

    def apply(self, write_set: Iterable[WriteItem], version: Version) -> None:
        for item in write_set:
            self.put_entry(entry_for(item, version))

    def scan(self, prefix: str) -> list[WorldStateEntry]:
        return [self._entries[k] for k in sorted(self._entries)
                if k.startswith(prefix) and not self._entries[k].is_deleted]

    def to_document(self) -> dict:
        return {key: {'value': None if e.value is None else e.value.decode('utf-8'), 'version': list(e.version)}
                for key, e in self._entries.items()}

    def dumps(self) -> bytes:
        return canonical.dumps(self.to_document())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WorldState) and self.dumps() == other.dumps()

    def __len__(self) -> int:
        return sum(1 for e in self._entries.values() if not e.is_deleted)


def entry_for(item: WriteItem, version: Version) -> WorldStateEntry:
    value = None if item.is_delete else item.value.encode('utf-8')
    return WorldStateEntry(key=item.key, value=value, version=version)


def replay(blocks: Iterable[Block], honor_validity: bool = True) -> WorldState:
    """
    The replay function rebuilds world state from a chain by applying its transactions in order.

    :param blocks: Iterable[Block]: Committed blocks, genesis first
    :param honor_validity: bool: Skip invalidated transactions (False applies every write set)
    :return: The rebuilt world state
    """
    state = WorldState()
    for block in blocks:
        for index, tx in enumerate(block.txs):
            if honor_validity and not block.validity[index]:
                continue
            state.apply(tx.write_set, (block.height, index))
    return state


class TxContext:
    """
    State access of a single simulation. Reads record the version they saw; writes are
    buffered into the write set and never reach the world state. GetState does not see
    the simulation's own buffered writes.
    """

    def __init__(self, state: WorldState, proposal: Proposal):
        self.proposal = proposal
        self._state = state
        self._reads: dict[str, Optional[Version]] = {}
        self._writes: dict[str, WriteItem] = {}
        self._open = True

    @property
    def tx_id(self) -> str:
        return self.proposal.tx_id

    @property
    def creator(self) -> IdentityCertificate:
        return self.proposal.creator

    @property
    def timestamp(self) -> int:
        return self.proposal.timestamp

    def _check_open(self) -> None:
        if not self._open:
            raise StateAccessOutsideSimulation('state is only accessible while a simulation runs')

    def _record(self, key: str, entry: Optional[WorldStateEntry]) -> None:
        self._reads.setdefault(key, entry.version if entry is not None else None)

    def get_state(self, key: str) -> Optional[bytes]:
        self._check_open()
        entry = self._state.get(key)
        self._record(key, entry)
        return None if entry is None else entry.value

    def get_state_by_prefix(self, prefix: str) -> list[tuple[str, bytes]]:
        self._check_open()
        entries = self._state.scan(prefix)
        for entry in entries:
            self._record(entry.key, entry)
        return [(entry.key, entry.value) for entry in entries]

    def put_state(self, key: str, value: bytes) -> None:
        self._check_open()
        self._writes[key] = WriteItem(key=key, value=value.decode('utf-8'))

    def delete_state(self, key: str) -> None:
        self._check_open()
        self._writes[key] = WriteItem(key=key, is_delete=True)

    def close(self) -> tuple[tuple[ReadItem, ...], tuple[WriteItem, ...]]:
        self._open = False
        read_set = tuple(ReadItem(key=k, version=self._reads[k]) for k in sorted(self._reads))
        write_set = tuple(self._writes[k] for k in sorted(self._writes))
        return read_set, write_set


class ContractHost(Protocol):
    def invoke(self, ctx: TxContext) -> Any:
        ...


class Peer:
    """
    One ledger replica. Simulation and block application share one lock, so a simulation
    always sees the state of a whole number of committed blocks.

    Endorsement refuses proposals stamped further than max_clock_skew from the peer's clock;
    commit invalidates transactions stamped that far from the sequencer's block time.
    """

    def __init__(self, identity: Identity, msp: MembershipService, contracts: ContractHost,
                 policy: EndorsementPolicy, archive: Optional[BlockArchive] = None,
                 clock: Callable[[], float] = time.time, max_clock_skew: Optional[int] = None):
        self.identity = identity
        self.peer_id = identity.certificate.subject_id
        self._msp = msp
        self._contracts = contracts
        self._policy = policy
        self._archive = archive
        self._clock = clock
        self.max_clock_skew = max_clock_skew or settings.max_clock_skew_s
        self._lock = threading.RLock()
        self._state = WorldState()
        self._blocks: list[Block] = [genesis_block()]
        self._tx_codes: dict[str, TxValidationCode] = {}
        if archive is not None:
            self._restore(archive)

    def _restore(self, archive: BlockArchive) -> None:
        blocks, bad = archive.scan()
        if bad is not None:
            raise BrokenChain(f'archive {archive.path} is damaged at height {bad}', height=bad)
        if not blocks:
            archive.append(self._blocks[0])
            return
        if blocks[0] != self._blocks[0]:
            raise BrokenChain(f'archive {archive.path} has a foreign genesis block', height=0)
        for block in blocks[1:]:
            self.validate_and_commit(block, persist=False)
        logger.info('peer %s restored %d blocks from %s', self.peer_id, len(blocks), archive.path)

    @property
    def msp(self) -> MembershipService:
        return self._msp

    @property
    def state(self) -> WorldState:
        return self._state

    @property
    def height(self) -> int:
        return len(self._blocks)

    @property
    def head_hash(self) -> str:
        return self._blocks[-1].block_hash

    def blocks(self) -> list[Block]:
        with self._lock:
            return list(self._blocks)

    def blocks_from(self, height: int) -> list[Block]:
        with self._lock:
            return self._blocks[max(height, 0):]

    def get_state(self, key: str) -> Optional[WorldStateEntry]:
        entry = self._state.get(key)
        return None if entry is None or entry.is_deleted else entry

    def scan_state(self, prefix: str) -> list[WorldStateEntry]:
        with self._lock:
            return self._state.scan(prefix)

    def tx_code(self, tx_id: str) -> Optional[TxValidationCode]:
        return self._tx_codes.get(tx_id)

    def simulate(self, proposal: Proposal) -> SimulationResult:
        """
        The simulate function executes a proposal against the current committed state.
        World state is not mutated; every read is versioned and every write is buffered.

        :param proposal: Proposal: A signed proposal
        :return: Contract response with its read and write sets
        """
        self._msp.require(proposal.creator)
        if proposal.tx_id != transaction_id(proposal):
            raise MalformedRequest('tx_id does not match the proposal')
        if not crypto.verify(proposal_payload(proposal), proposal.signature, proposal.creator.public_key):
            raise BadCertificate(f'proposal of {proposal.creator.subject_id} is not signed by its creator')
        drift = proposal.timestamp - int(self._clock())
        if abs(drift) > self.max_clock_skew:
            raise ClockSkew(f'proposal {proposal.tx_id[:12]} is stamped {drift:+d} s from peer {self.peer_id}')
        with self._lock:
            ctx = TxContext(self._state, proposal)
            try:
                result = self._contracts.invoke(ctx)
            finally:
                read_set, write_set = ctx.close()
        return SimulationResult(response=canonical.dumps_str(result), read_set=read_set, write_set=write_set)

    def endorse(self, proposal: Proposal) -> ProposalResponse:
        simulation = self.simulate(proposal)
        signature = crypto.sign(endorsement_payload(proposal.tx_id, simulation), self.identity.private_key)
        endorsement = Endorsement(peer_id=self.peer_id, certificate=self.identity.certificate, signature=signature)
        return ProposalResponse(peer_id=self.peer_id, simulation=simulation, endorsement=endorsement)

    def _endorsed(self, tx: Transaction) -> bool:
        payload = endorsement_payload(tx.tx_id, tx.simulation())
        by_peer = {e.peer_id: e for e in tx.endorsements}
        for peer_id in self._policy.required_peers:
            endorsement = by_peer.get(peer_id)
            if endorsement is None:
                return False
            cert = endorsement.certificate
            if cert.subject_id != peer_id or cert.role_class != RoleClass.peer or not self._msp.verify(cert).ok:
                return False
            if not crypto.verify(payload, endorsement.signature, cert.public_key):
                return False
        return True

    def _check(self, tx: Transaction, block: Block, pending: dict[str, WorldStateEntry],
               seen: set[str]) -> TxValidationCode:
        if tx.tx_id in self._tx_codes or tx.tx_id in seen:
            return TxValidationCode.duplicate_txid
        if tx.tx_id != transaction_id(tx):
            return TxValidationCode.bad_payload
        if not self._msp.verify(tx.creator).ok or not crypto.verify(
                proposal_payload(tx.proposal()), tx.signature, tx.creator.public_key):
            return TxValidationCode.bad_creator_signature
        if not self._endorsed(tx):
            return TxValidationCode.endorsement_policy_failure
        if abs(tx.timestamp - block.timestamp) > self.max_clock_skew:
            return TxValidationCode.timestamp_out_of_range
        for item in tx.read_set:
            current = pending[item.key] if item.key in pending else self._state.get(item.key)
            if (current.version if current is not None else None) != item.version:
                return TxValidationCode.mvcc_read_conflict
        return TxValidationCode.valid

    def validate_and_commit(self, block: Block, persist: bool = True) -> tuple[TxValidationCode, ...]:
        """
        The validate_and_commit function validates every transaction of a block in order and commits it.
        Valid transactions apply their write sets, invalid ones apply nothing, and the block is
        appended either way. A block that carries a hash (catch-up delivery) must reproduce it.

        :param block: Block: The next block of the chain
        :param persist: bool: Append the committed block to the archive
        :return: The validation code of every transaction
        """
        with self._lock:
            if block.height != self.height or block.prev_hash != self.head_hash:
                raise BrokenChain(f'block {block.height} does not extend the chain at height {self.height}',
                                  height=block.height)
            pending: dict[str, WorldStateEntry] = {}
            seen: set[str] = set()
            codes = []
            for index, tx in enumerate(block.txs):
                code = self._check(tx, block, pending, seen)
                if code == TxValidationCode.valid:
                    for item in tx.write_set:
                        pending[item.key] = entry_for(item, (block.height, index))
                seen.add(tx.tx_id)
                codes.append(code)
            sealed = seal(block.copy(update={'validity': tuple(c == TxValidationCode.valid for c in codes)}))
            if block.block_hash and block.block_hash != sealed.block_hash:
                raise BrokenChain(f'block {block.height} does not reproduce its hash', height=block.height)
            for entry in pending.values():
                self._state.put_entry(entry)
            self._blocks.append(sealed)
            for tx, code in zip(block.txs, codes):
                self._tx_codes.setdefault(tx.tx_id, code)
            if persist and self._archive is not None:
                self._archive.append(sealed)
        invalid = [(tx.tx_id, code) for tx, code in zip(block.txs, codes) if code != TxValidationCode.valid]
        for tx_id, code in invalid:
            logger.warning('peer %s invalidated %s: %s', self.peer_id, tx_id[:12], code.value)
        logger.info('peer %s committed block %d: %d valid, %d invalid',
                    self.peer_id, block.height, len(codes) - len(invalid), len(invalid))
        return tuple(codes)

    def verify_chain(self) -> Optional[int]:
        return verify_blocks(self.blocks())

    def replay(self, honor_validity: bool = True) -> WorldState:
        blocks = self.blocks()
        broken = verify_blocks(blocks)
        if broken is not None:
            raise BrokenChain(f'chain broken at height {broken}', height=broken)
        return replay(blocks, honor_validity)
