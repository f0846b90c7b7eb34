"""
Client side of the transaction flow: signed proposals, endorsement collection and submission.
"""
from __future__ import annotations

import logging
import secrets
import time
from collections.abc import Callable, Mapping, Sequence
from typing import Any, Optional

from src.exceptions import EndorsementMismatch, InsufficientEndorsements, LedgerError, TxInvalidated
from src.schemas import (ContractName, EndorsementPolicy, Identity, Proposal, SubmitResult, Transaction,
                         TxValidationCode)
from src.services import canonical, crypto
from src.services.ledger import Peer, proposal_payload, transaction_id
from src.services.ordering import OrderingService

logger = logging.getLogger(__name__)


def new_proposal(identity: Identity, contract: ContractName, function: str, args: Sequence[Any] = (),
                 clock: Callable[[], float] = time.time, nonce: Optional[str] = None) -> Proposal:
    """
    The new_proposal function builds and signs a proposal.
    Contracts read time from the timestamp fixed here; peers accept it only within
    max_clock_skew_s of their own clock and of the block time the sequencer assigns.

    :param identity: Identity: Submitting identity
    :param contract: ContractName: Target contract
    :param function: str: Contract function
    :param args: Sequence[Any]: Arguments, each serialized to its canonical form
    :param clock: Callable[[], float]: Time source in UTC seconds
    :param nonce: Optional[str]: Fixed nonce, random when omitted
    :return: The signed proposal
    """
    proposal = Proposal(
        tx_id='',
        creator=identity.certificate,
        contract=contract,
        function=function,
        args=tuple(canonical.dumps_str(arg) for arg in args),
        timestamp=int(clock()),
        nonce=nonce if nonce is not None else secrets.token_hex(8),
    )
    proposal = proposal.copy(update={'tx_id': transaction_id(proposal)})
    return proposal.copy(update={'signature': crypto.sign(proposal_payload(proposal), identity.private_key)})


def payload_of(result: SubmitResult) -> Any:
    if result.code != TxValidationCode.valid:
        raise TxInvalidated(f'transaction {result.tx_id} invalidated: {result.code.value}')
    return result.payload


class Gateway:
    """Collects endorsements from the peers named by the endorsement policy and submits for ordering."""

    def __init__(self, endorsers: Mapping[str, Peer], policy: EndorsementPolicy,
                 ordering: Optional[OrderingService] = None):
        self.endorsers = endorsers
        self.policy = policy
        self.ordering = ordering

    def endorse(self, proposal: Proposal) -> Transaction:
        """
        The endorse function has every required peer simulate the proposal and
        assembles the transaction when all simulation results are byte-identical.

        :param proposal: Proposal: Signed proposal
        :return: The endorsed transaction
        """
        missing = [peer_id for peer_id in self.policy.required_peers if peer_id not in self.endorsers]
        if missing:
            raise InsufficientEndorsements(f'no endorsing peer reachable for {", ".join(missing)}')
        responses = [self.endorsers[peer_id].endorse(proposal) for peer_id in self.policy.required_peers]
        results = {canonical.dumps(r.simulation) for r in responses}
        if len(results) != 1:
            logger.info('endorsement mismatch on %s.%s (%s)', proposal.contract.value, proposal.function,
                        proposal.tx_id[:12])
            raise EndorsementMismatch(f'peers disagree on the result of {proposal.function}')
        simulation = responses[0].simulation
        return Transaction(**proposal.dict(), **simulation.dict(),
                           endorsements=tuple(r.endorsement for r in responses))

    async def submit(self, proposal: Proposal) -> SubmitResult:
        """
        The submit function endorses a proposal, orders it and waits for its commit.

        :param proposal: Proposal: Signed proposal
        :return: tx_id, validation code and the contract's response document
        """
        if self.ordering is None:
            raise LedgerError('gateway has no ordering service')
        tx = self.endorse(proposal)
        code = await self.ordering.broadcast(tx)
        return SubmitResult(tx_id=tx.tx_id, code=code, payload=canonical.loads(tx.response))

    def submit_sync(self, proposals: Sequence[Proposal]) -> list[SubmitResult]:
        """
        The submit_sync function endorses proposals and orders them in one synchronous pass.
        Transactions later in the batch see no effect of earlier ones at simulation time.

        :param proposals: Sequence[Proposal]: Signed proposals in submission order
        :return: One result per proposal
        """
        if self.ordering is None:
            raise LedgerError('gateway has no ordering service')
        txs = [self.endorse(p) for p in proposals]
        self.ordering.sequencer.order(txs)
        replica = self.ordering.sequencer.replica
        return [SubmitResult(tx_id=tx.tx_id, code=replica.tx_code(tx.tx_id), payload=canonical.loads(tx.response))
                for tx in txs]
