"""
Edge node of a domain: ledger peer, gateway, payload store and the retrieval workflow,
including forwarding to the edge of the domain that holds the data.
"""
from __future__ import annotations

import base64
import logging
import time
from collections.abc import Callable, Mapping
from typing import Any

from pydantic import ValidationError

from src.exceptions import (AccessRejected, BadCertificate, DataNotFound, ForwardFailed, GrantNotFound, HashMismatch,
                            LedgerError, MalformedRequest, TransportError, Unauthorized, UnknownDomain)
from src.repository.ddss import DdssStore
from src.schemas import (AccessAuditRecord, AccessDecision, AccessGrant, Block, ContractName, DataRecordEntry,
                         DomainConfig, Identity, MessageType, ObjectRef, Operation, Proposal, RoleClass, SubmitResult,
                         Verdict, WireMessage)
from src.services import canonical, crypto
from src.services.contracts import audit_key, data_key, data_prefix
from src.services.gateway import Gateway, new_proposal, payload_of
from src.services.ledger import Peer
from src.services.transport import Transport, expect

logger = logging.getLogger(__name__)


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode('ascii')


def unb64(text: str) -> bytes:
    try:
        return base64.b64decode(text.encode('ascii'), validate=True)
    except (ValueError, UnicodeEncodeError):
        raise MalformedRequest('payload is not base64')


def grant_payload(grant: AccessGrant) -> bytes:
    return canonical.dumps(grant.dict(exclude={'signature'}))


def access_body(object_ref: ObjectRef, operation: Operation, client_ip: str) -> dict:
    return {'object_ref': object_ref.dict(), 'operation': operation.value, 'client_ip': client_ip}


class EdgeNode:
    def __init__(self, config: DomainConfig, peer: Peer, gateway: Gateway, ddss: DdssStore, identity: Identity,
                 transport: Transport, directory: Mapping[str, str], clock: Callable[[], float] = time.time):
        self.config = config
        self.domain_id = config.domain_id
        self.peer = peer
        self.gateway = gateway
        self.ddss = ddss
        self.identity = identity
        self.transport = transport
        self.directory = directory
        self.clock = clock

    async def submit(self, proposal: Proposal) -> SubmitResult:
        return await self.gateway.submit(proposal)

    async def ingest(self, identity: Identity, payload: bytes, device_id: str, data_type: str) -> str:
        """
        The ingest function stores a device payload in the domain's store and records its hash on chain.

        :param identity: Identity: Gateway identity, a Peer of this domain
        :param payload: bytes: Raw device payload
        :param device_id: str: Producing device
        :param data_type: str: Kind of reading, e.g. temperature
        :return: Content hash of the payload
        """
        entry = DataRecordEntry(device_id=device_id, domain_id=self.domain_id, data_type=data_type,
                                content_hash=canonical.sha256_hex(payload), produced_at=int(self.clock()))
        proposal = new_proposal(identity, ContractName.access, 'RecordData', [entry], clock=self.clock)
        return await self.ingest_proposal(payload, proposal)

    async def ingest_proposal(self, payload: bytes, proposal: Proposal) -> str:
        if proposal.contract != ContractName.access or proposal.function != 'RecordData' or len(proposal.args) != 1:
            raise MalformedRequest('ingest needs a RecordData proposal')
        cert = self.peer.msp.require(proposal.creator)
        if cert.role_class != RoleClass.peer or cert.attributes.domain_id != self.domain_id:
            raise Unauthorized(f'{cert.subject_id} is not a gateway of {self.domain_id}')
        try:
            entry = DataRecordEntry.parse_raw(proposal.args[0])
        except ValidationError as err:
            raise MalformedRequest(f'malformed data record: {err}')
        if entry.content_hash != canonical.sha256_hex(payload):
            raise HashMismatch('payload does not match the recorded hash')
        self.ddss.put(payload)
        payload_of(await self.gateway.submit(proposal))
        logger.info('%s ingested %s for %s', self.domain_id, entry.content_hash[:12], entry.device_id)
        return entry.content_hash

    def latest_record(self, object_ref: ObjectRef) -> DataRecordEntry:
        entries = [DataRecordEntry.parse_raw(e.value)
                   for e in self.peer.scan_state(data_prefix(object_ref.domain_id, object_ref.device_id))]
        if not entries:
            raise DataNotFound(f'no data recorded for {object_ref.device_id}@{object_ref.domain_id}')
        return max(entries, key=lambda e: (e.produced_at, e.content_hash))

    def read_local(self, object_ref: ObjectRef) -> tuple[bytes, str]:
        record = self.latest_record(object_ref)
        return self.ddss.get(record.content_hash), record.content_hash

    async def check_access(self, proposal: Proposal) -> AccessDecision:
        if proposal.contract != ContractName.access or proposal.function != 'CheckAccess':
            raise MalformedRequest('access needs a CheckAccess proposal')
        return AccessDecision.parse_obj(payload_of(await self.gateway.submit(proposal)))

    async def handle_access(self, proposal: Proposal) -> bytes:
        """
        The handle_access function decides a request on chain and serves the approved payload.
        Data held by this domain is read from the local store; anything else is forwarded to
        the edge of the object's domain with a signed grant naming the audit record.

        :param proposal: Proposal: Signed CheckAccess proposal of the requester
        :return: The payload bytes
        """
        decision = await self.check_access(proposal)
        if decision.verdict == Verdict.reject:
            raise AccessRejected(decision.reason.value)
        record = await self.audit_record(proposal.tx_id)
        request = record.request
        case = 1 if request.subject.domain_id == request.object_ref.domain_id else 2
        logger.info('%s approved %s for %s, retrieval case %d', self.domain_id, request.object_ref.device_id,
                    request.subject.user_id, case)
        if request.object_ref.domain_id == self.domain_id:
            payload, _ = self.read_local(request.object_ref)
            return payload
        grant = self.issue_grant(record)
        return await self.forward(request.object_ref.domain_id, grant, request.object_ref)

    async def audit_record(self, tx_id: str) -> AccessAuditRecord:
        entry = self.peer.get_state(audit_key(tx_id))
        if entry is None:
            await self.sync()
            entry = self.peer.get_state(audit_key(tx_id))
        if entry is None:
            raise LedgerError(f'audit record of {tx_id} is not committed on {self.peer.peer_id}')
        return AccessAuditRecord.parse_raw(entry.value)

    def issue_grant(self, record: AccessAuditRecord) -> AccessGrant:
        grant = AccessGrant(tx_id=record.tx_id, subject=record.request.subject, object_ref=record.request.object_ref,
                            operation=record.request.operation, issuer_domain=self.domain_id,
                            issuer=self.identity.certificate)
        return grant.copy(update={'signature': crypto.sign(grant_payload(grant), self.identity.private_key)})

    async def forward(self, destination: str, grant: AccessGrant, object_ref: ObjectRef) -> bytes:
        """
        The forward function fetches an approved payload from the edge of another domain.
        The relayed bytes must hash to the value recorded on this edge's ledger copy.

        :param destination: str: Domain holding the data
        :param grant: AccessGrant: Signed grant referencing the Approve audit record
        :param object_ref: ObjectRef: Requested object
        :return: The payload bytes
        """
        endpoint = self.directory.get(destination)
        if endpoint is None or destination == self.domain_id:
            raise UnknownDomain(f'no edge known for domain {destination}')
        message = WireMessage(type=MessageType.forward_request, body={'grant': canonical.to_document(grant)})
        try:
            body = expect(await self.transport.request(endpoint, message), MessageType.forward_response)
        except TransportError as err:
            raise ForwardFailed(f'forward to {destination} failed: {err.message}')
        payload, content_hash = unb64(body.get('payload', '')), body.get('content_hash', '')
        if canonical.sha256_hex(payload) != content_hash:
            raise HashMismatch(f'payload relayed by {destination} does not match {content_hash}')
        if self.peer.get_state(data_key(object_ref.domain_id, object_ref.device_id, content_hash)) is None:
            await self.sync()
            if self.peer.get_state(data_key(object_ref.domain_id, object_ref.device_id, content_hash)) is None:
                raise HashMismatch(f'{content_hash} is not recorded for {object_ref.device_id}')
        logger.info('%s relayed %s from %s', self.domain_id, content_hash[:12], destination)
        return payload

    def verify_grant(self, grant: AccessGrant) -> None:
        cert = self.peer.msp.require(grant.issuer, RoleClass.peer)
        if cert.attributes.domain_id != grant.issuer_domain or not crypto.verify(
                grant_payload(grant), grant.signature, cert.public_key):
            raise BadCertificate(f'grant {grant.tx_id[:12]} is not signed by the edge of {grant.issuer_domain}')

    def _approved(self, grant: AccessGrant) -> bool:
        entry = self.peer.get_state(audit_key(grant.tx_id))
        if entry is None:
            return False
        record = AccessAuditRecord.parse_raw(entry.value)
        return (record.decision.verdict == Verdict.approve and record.request.subject == grant.subject
                and record.request.object_ref == grant.object_ref and record.request.operation == grant.operation)

    async def serve_forward(self, grant: AccessGrant) -> tuple[bytes, str]:
        """
        The serve_forward function answers a forwarded request after checking the grant
        against this edge's own ledger copy. A missing audit record triggers one sync.

        :param grant: AccessGrant: Grant sent by the relaying edge
        :return: Payload and its content hash
        """
        self.verify_grant(grant)
        if grant.object_ref.domain_id != self.domain_id:
            raise DataNotFound(f'{grant.object_ref.device_id} is not held by {self.domain_id}')
        if not self._approved(grant):
            await self.sync()
            if not self._approved(grant):
                raise GrantNotFound(f'no approved access recorded for {grant.tx_id}')
        return self.read_local(grant.object_ref)

    async def sync(self) -> int:
        """
        The sync function fetches missing blocks from the other edges and commits them.
        Every fetched block must reproduce its hash; a tampered block is discarded.

        :return: Chain height after the catch-up
        """
        for domain_id, endpoint in sorted(self.directory.items()):
            if domain_id == self.domain_id:
                continue
            message = WireMessage(type=MessageType.block_fetch, body={'from_height': self.peer.height})
            try:
                body = expect(await self.transport.request(endpoint, message), MessageType.block_response)
            except TransportError as err:
                logger.warning('%s cannot sync from %s: %s', self.domain_id, domain_id, err)
                continue
            blocks = [Block.parse_obj(doc) for doc in body.get('blocks', [])]
            for block in blocks:
                if block.height >= self.peer.height:
                    self.peer.validate_and_commit(block)
            if blocks:
                logger.info('%s synced to height %d from %s', self.domain_id, self.peer.height, domain_id)
        return self.peer.height

    async def handle(self, message: WireMessage) -> WireMessage:
        """
        The handle function serves one framed request addressed to this edge.

        :param message: WireMessage: Decoded request
        :return: The reply message
        """
        body = message.body
        try:
            if message.type == MessageType.ping:
                return WireMessage(type=MessageType.pong, body=self.status())
            if message.type == MessageType.invoke:
                result = await self.submit(Proposal.parse_obj(body['proposal']))
                return WireMessage(type=MessageType.invoke_result, body=canonical.to_document(result))
            if message.type == MessageType.data_get:
                payload = await self.handle_access(Proposal.parse_obj(body['proposal']))
                return WireMessage(type=MessageType.data_response,
                                   body={'payload': b64(payload), 'content_hash': canonical.sha256_hex(payload)})
            if message.type == MessageType.ingest:
                content_hash = await self.ingest_proposal(unb64(body['payload']), Proposal.parse_obj(body['proposal']))
                return WireMessage(type=MessageType.ingest_result, body={'content_hash': content_hash})
            if message.type == MessageType.forward_request:
                payload, content_hash = await self.serve_forward(AccessGrant.parse_obj(body['grant']))
                return WireMessage(type=MessageType.forward_response,
                                   body={'payload': b64(payload), 'content_hash': content_hash})
            if message.type == MessageType.block_fetch:
                blocks = self.peer.blocks_from(int(body.get('from_height', 0)))
                return WireMessage(type=MessageType.block_response, body={'blocks': canonical.to_document(blocks)})
        except (KeyError, TypeError, ValidationError) as err:
            raise MalformedRequest(f'malformed {message.type.value}: {err}')
        raise MalformedRequest(f'{self.domain_id} does not serve {message.type.value}')

    def status(self) -> dict[str, Any]:
        return {'domain_id': self.domain_id, 'peer_id': self.peer.peer_id, 'height': self.peer.height,
                'head_hash': self.peer.head_hash}
