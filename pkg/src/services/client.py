"""
Client side of the network: signs proposals with an enrolled identity and talks to an edge
over the framed protocol. Private keys never leave this side.
"""
from __future__ import annotations

import logging
import time
from collections.abc import Callable, Sequence
from typing import Any, Optional

from pydantic import ValidationError

from src.exceptions import ConfigError, HashMismatch, TransportError, UnknownDomain
from src.schemas import (AccessDecision, ContractName, Identity, MessageType, NetworkConfig, ObjectRef, Operation,
                         SubmitResult, WireMessage)
from src.services import canonical
from src.services.edge import access_body, b64, unb64
from src.services.gateway import new_proposal, payload_of
from src.services.transport import TcpTransport, Transport, expect

logger = logging.getLogger(__name__)


class Client:
    def __init__(self, config: NetworkConfig, identity: Identity, transport: Optional[Transport] = None,
                 clock: Callable[[], float] = time.time):
        self.config = config
        self.identity = identity
        self.transport = transport or TcpTransport()
        self.clock = clock

    def endpoint(self, domain_id: Optional[str] = None) -> str:
        """
        The endpoint function picks the edge a request goes to: the named domain, else the
        caller's own domain, else the first domain of the network.

        :param domain_id: Optional[str]: Explicit target domain
        :return: host:port of the edge
        """
        if not self.config.domains:
            raise ConfigError('the network has no domains')
        if domain_id is not None:
            domain = self.config.domain(domain_id)
            if domain is None:
                raise UnknownDomain(f'no edge for domain {domain_id}')
            return domain.endpoint
        domain = self.config.domain(self.identity.certificate.attributes.domain_id) or self.config.domains[0]
        return domain.endpoint

    async def _request(self, message: WireMessage, expected: MessageType, domain_id: Optional[str] = None) -> dict:
        reply = await self.transport.request(self.endpoint(domain_id), message)
        return expect(reply, expected)

    async def submit(self, contract: ContractName, function: str, args: Sequence[Any] = (),
                     domain_id: Optional[str] = None) -> SubmitResult:
        proposal = new_proposal(self.identity, contract, function, args, clock=self.clock)
        body = await self._request(WireMessage(type=MessageType.invoke, body={'proposal': canonical.to_document(proposal)}),
                                   MessageType.invoke_result, domain_id)
        try:
            return SubmitResult.parse_obj(body)
        except ValidationError as err:
            raise TransportError(f'malformed submit result: {err}')

    async def invoke(self, contract: ContractName, function: str, args: Sequence[Any] = (),
                     domain_id: Optional[str] = None) -> Any:
        """
        The invoke function submits a contract transaction and returns the contract's response
        once the transaction is committed valid.

        :param contract: ContractName: Target contract
        :param function: str: Contract function
        :param args: Sequence[Any]: Function arguments
        :param domain_id: Optional[str]: Edge to submit through
        :return: The response document
        """
        return payload_of(await self.submit(contract, function, args, domain_id))

    async def check_access(self, object_ref: ObjectRef, operation: Operation, client_ip: str) -> AccessDecision:
        payload = await self.invoke(ContractName.access, 'CheckAccess', [access_body(object_ref, operation, client_ip)])
        return AccessDecision.parse_obj(payload)

    async def get_data(self, object_ref: ObjectRef, client_ip: str, operation: Operation = Operation.read
                       ) -> tuple[bytes, str]:
        """
        The get_data function requests an object's latest payload through the caller's edge.
        The edge decides access on chain and forwards across domains when needed.

        :param object_ref: ObjectRef: Requested device and its domain
        :param client_ip: str: Address reported in the access request
        :param operation: Operation: Requested operation
        :return: Payload bytes and their content hash
        """
        proposal = new_proposal(self.identity, ContractName.access, 'CheckAccess',
                                [access_body(object_ref, operation, client_ip)], clock=self.clock)
        body = await self._request(WireMessage(type=MessageType.data_get,
                                               body={'proposal': canonical.to_document(proposal)}),
                                   MessageType.data_response)
        payload, content_hash = unb64(body.get('payload', '')), body.get('content_hash', '')
        if canonical.sha256_hex(payload) != content_hash:
            raise HashMismatch(f'received payload does not match {content_hash}')
        return payload, content_hash

    async def ingest(self, payload: bytes, device_id: str, data_type: str) -> str:
        """
        The ingest function hands a device payload to the edge of the caller's domain, along
        with the signed RecordData proposal that puts its hash on chain.

        :param payload: bytes: Raw device payload
        :param device_id: str: Producing device
        :param data_type: str: Kind of reading
        :return: Content hash of the payload
        """
        domain_id = self.identity.certificate.attributes.domain_id
        entry = {'device_id': device_id, 'domain_id': domain_id, 'data_type': data_type,
                 'content_hash': canonical.sha256_hex(payload), 'produced_at': int(self.clock())}
        proposal = new_proposal(self.identity, ContractName.access, 'RecordData', [entry], clock=self.clock)
        body = await self._request(WireMessage(type=MessageType.ingest,
                                               body={'payload': b64(payload),
                                                     'proposal': canonical.to_document(proposal)}),
                                   MessageType.ingest_result, domain_id)
        return body['content_hash']
