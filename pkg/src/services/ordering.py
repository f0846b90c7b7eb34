"""
Ordering: a single sequencer that totally orders endorsed transactions, cuts blocks and
delivers them directly to the attached peers.
"""
from __future__ import annotations

import asyncio
import logging
import threading
import time
from collections.abc import Callable, Sequence
from typing import Optional

from src.conf.config import settings
from src.exceptions import BrokenChain, DbcAbacError
from src.schemas import Block, Transaction, TxValidationCode
from src.services.ledger import Peer

logger = logging.getLogger(__name__)


class Sequencer:
    """
    Cuts blocks in arrival order and stamps each with its own clock. The sequencer commits
    every block on its own replica first, which gives it the head hash that links the next block.
    """

    def __init__(self, replica: Peer, max_block_txs: Optional[int] = None, clock: Callable[[], float] = time.time):
        self.replica = replica
        self.clock = clock
        self.max_block_txs = max_block_txs or settings.max_block_txs
        self._peers: dict[str, Peer] = {}
        self._lock = threading.RLock()

    @property
    def height(self) -> int:
        return self.replica.height

    def attach(self, peer: Peer) -> None:
        with self._lock:
            self.catch_up(peer)
            self._peers[peer.peer_id] = peer

    def detach(self, peer_id: str) -> None:
        self._peers.pop(peer_id, None)

    def cut(self, txs: Sequence[Transaction]) -> Block:
        return Block(height=self.replica.height, prev_hash=self.replica.head_hash, timestamp=int(self.clock()),
                     txs=tuple(txs))

    def catch_up(self, peer: Peer) -> None:
        for block in self.replica.blocks_from(peer.height):
            peer.validate_and_commit(block)

    def deliver(self, block: Block) -> tuple[TxValidationCode, ...]:
        """
        The deliver function commits a freshly cut block on the replica, then hands every block an
        attached peer is missing to that peer. Peers recompute validity and must reproduce the
        replica's block hash. A peer that cannot take a block is logged and left behind.

        :param block: Block: Block produced by cut
        :return: Validation codes computed by the replica
        """
        with self._lock:
            codes = self.replica.validate_and_commit(block)
            for peer in list(self._peers.values()):
                try:
                    self.catch_up(peer)
                except BrokenChain as err:
                    logger.error('peer %s did not take block %d: %s', peer.peer_id, err.height, err)
        logger.info('block %d cut with %d txs', block.height, len(block.txs))
        return codes

    def order(self, txs: Sequence[Transaction]) -> list[Block]:
        """
        The order function orders a batch synchronously, cutting a block every max_block_txs transactions.

        :param txs: Sequence[Transaction]: Endorsed transactions in arrival order
        :return: The committed blocks
        """
        blocks = []
        with self._lock:
            for start in range(0, len(txs), self.max_block_txs):
                block = self.cut(txs[start:start + self.max_block_txs])
                self.deliver(block)
                blocks.append(self.replica.blocks_from(block.height)[0])
        return blocks


class OrderingService:
    """
    Batches broadcast transactions and cuts a block when max_block_txs are pending or when
    block_timeout has passed since the first pending transaction arrived.
    """

    def __init__(self, sequencer: Sequencer, block_timeout_ms: Optional[int] = None):
        self.sequencer = sequencer
        self.block_timeout = (block_timeout_ms or settings.block_timeout_ms) / 1000
        self._pending: list[tuple[Transaction, asyncio.Future]] = []
        self._timer: Optional[asyncio.TimerHandle] = None

    @property
    def pending(self) -> int:
        return len(self._pending)

    async def broadcast(self, tx: Transaction) -> TxValidationCode:
        """
        The broadcast function queues an endorsed transaction and waits until it is committed.

        :param tx: Transaction: Endorsed transaction
        :return: Its validation code
        """
        loop = asyncio.get_running_loop()
        future = loop.create_future()
        self._pending.append((tx, future))
        if len(self._pending) >= self.sequencer.max_block_txs:
            self._cut()
        elif self._timer is None:
            self._timer = loop.call_later(self.block_timeout, self._cut)
        return await future

    def _cut(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
        size = self.sequencer.max_block_txs
        batch, self._pending = self._pending[:size], self._pending[size:]
        if batch:
            try:
                codes = self.sequencer.deliver(self.sequencer.cut([tx for tx, _ in batch]))
            except DbcAbacError as err:
                logger.error('block cut failed: %s', err)
                for _, future in batch:
                    if not future.done():
                        future.set_exception(err)
            else:
                for (_, future), code in zip(batch, codes):
                    if not future.done():
                        future.set_result(code)
        if self._pending:
            self._timer = asyncio.get_running_loop().call_later(self.block_timeout, self._cut)

    def flush(self) -> None:
        while self._pending:
            self._cut()
