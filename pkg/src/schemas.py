import hashlib
import ipaddress
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, Field, StrictBool, StrictInt, StrictStr, conint, constr, root_validator, validator

NonEmptyStr = constr(strict=True, min_length=1)
Version = Tuple[int, int]


class FrozenModel(BaseModel):
    class Config:
        frozen = True
        extra = 'forbid'


# abac-core

class Attribute(FrozenModel):
    name: NonEmptyStr
    value: Union[StrictBool, StrictInt, StrictStr]


class SubjectAttributes(FrozenModel):
    user_id: NonEmptyStr
    role: NonEmptyStr
    domain_id: NonEmptyStr


class ObjectAttributes(FrozenModel):
    device_id: NonEmptyStr
    domain_id: NonEmptyStr
    owner_ids: Tuple[NonEmptyStr, ...]
    data_type: NonEmptyStr

    @validator('owner_ids')
    def owners_form_a_set(cls, v):
        if not v:
            raise ValueError('owner_ids must not be empty')
        if len(set(v)) != len(v):
            raise ValueError('duplicate owner ids')
        return tuple(sorted(v))


class PermissionAttributes(FrozenModel):
    read: StrictInt = 1
    write: StrictInt = 1

    @validator('read', 'write')
    def bit(cls, v):
        if v not in (0, 1):
            raise ValueError('PA bit out of range')
        return v


class EnvironmentAttributes(FrozenModel):
    allowed_ip: StrictStr
    start_time: StrictInt
    end_time: StrictInt

    @validator('allowed_ip')
    def ipv4_prefix(cls, v):
        try:
            ipaddress.IPv4Network(v, strict=False)
        except ValueError:
            raise ValueError('allowed_ip is not a v4 address or prefix')
        return v

    @root_validator(skip_on_failure=True)
    def window(cls, values):
        if values['start_time'] > values['end_time']:
            raise ValueError('start_time after end_time')
        return values

    def network(self) -> ipaddress.IPv4Network:
        return ipaddress.IPv4Network(self.allowed_ip, strict=False)


class Policy(FrozenModel):
    sa: SubjectAttributes
    oa: ObjectAttributes
    pa: PermissionAttributes
    ea: EnvironmentAttributes


class Operation(str, Enum):
    read = 'Read'
    write = 'Write'


class ObjectRef(FrozenModel):
    device_id: NonEmptyStr
    domain_id: NonEmptyStr


class AccessRequest(FrozenModel):
    subject: SubjectAttributes
    object_ref: ObjectRef
    operation: Operation
    client_ip: StrictStr
    request_time: StrictInt

    @validator('client_ip')
    def ipv4_address(cls, v):
        ipaddress.IPv4Address(v)
        return v


class Verdict(str, Enum):
    approve = 'Approve'
    reject = 'Reject'


class Reason(str, Enum):
    match = 'Match'
    no_policy = 'NoPolicy'
    subject_mismatch = 'SubjectMismatch'
    permission_denied = 'PermissionDenied'
    outside_time_window = 'OutsideTimeWindow'
    ip_not_allowed = 'IpNotAllowed'
    policy_expired = 'PolicyExpired'


class AccessDecision(FrozenModel):
    verdict: Verdict
    reason: Reason
    matched_policy_key: Optional[str] = None

    @root_validator(skip_on_failure=True)
    def approve_has_match(cls, values):
        if values['verdict'] == Verdict.approve:
            if values['reason'] != Reason.match or not values.get('matched_policy_key'):
                raise ValueError('Approve requires reason Match and a matched policy key')
        return values


class ValidationResult(FrozenModel):
    ok: bool
    violations: Tuple[str, ...] = ()


# identity

class RoleClass(str, Enum):
    global_admin = 'GlobalAdmin'
    local_admin = 'LocalAdmin'
    user = 'User'
    peer = 'Peer'
    orderer = 'Orderer'


class IdentityCertificate(FrozenModel):
    subject_id: NonEmptyStr
    role_class: RoleClass
    attributes: SubjectAttributes
    org_id: NonEmptyStr
    ca_id: NonEmptyStr
    serial: StrictInt
    issued_at: StrictInt
    public_key: StrictStr
    signature: StrictStr = ''

    @property
    def msp_id(self) -> str:
        return f'{self.org_id}MSP'

    def unsigned(self) -> dict:
        return self.dict(exclude={'signature'})


class Identity(FrozenModel):
    """An enrolled identity: certificate plus its signing key (the identity file)."""
    certificate: IdentityCertificate
    private_key: StrictStr


class CertificateCheck(FrozenModel):
    ok: bool
    reason: Optional[str] = None


# ledger

class ContractName(str, Enum):
    policy = 'PolicyContract'
    access = 'AccessContract'


class ReadItem(FrozenModel):
    key: StrictStr
    version: Optional[Version] = None


class WriteItem(FrozenModel):
    key: StrictStr
    value: Optional[StrictStr] = None
    is_delete: bool = False

    @root_validator(skip_on_failure=True)
    def tombstone(cls, values):
        if values['is_delete'] != (values.get('value') is None):
            raise ValueError('a delete carries no value and a put carries one')
        return values


class Proposal(FrozenModel):
    tx_id: StrictStr
    creator: IdentityCertificate
    contract: ContractName
    function: NonEmptyStr
    args: Tuple[StrictStr, ...] = ()
    timestamp: StrictInt
    nonce: StrictStr
    signature: StrictStr = ''


class SimulationResult(FrozenModel):
    response: StrictStr
    read_set: Tuple[ReadItem, ...] = ()
    write_set: Tuple[WriteItem, ...] = ()


class Endorsement(FrozenModel):
    peer_id: NonEmptyStr
    certificate: IdentityCertificate
    signature: StrictStr


class ProposalResponse(FrozenModel):
    peer_id: NonEmptyStr
    simulation: SimulationResult
    endorsement: Endorsement


class Transaction(FrozenModel):
    tx_id: StrictStr
    creator: IdentityCertificate
    contract: ContractName
    function: NonEmptyStr
    args: Tuple[StrictStr, ...] = ()
    timestamp: StrictInt
    nonce: StrictStr
    signature: StrictStr
    response: StrictStr
    read_set: Tuple[ReadItem, ...] = ()
    write_set: Tuple[WriteItem, ...] = ()
    endorsements: Tuple[Endorsement, ...] = ()

    @validator('read_set', 'write_set')
    def unique_keys(cls, v):
        keys = [item.key for item in v]
        if len(set(keys)) != len(keys):
            raise ValueError('duplicate keys')
        return v

    def proposal(self) -> Proposal:
        return Proposal(**self.dict(include=set(Proposal.__fields__)))

    def simulation(self) -> SimulationResult:
        return SimulationResult(response=self.response, read_set=self.read_set, write_set=self.write_set)


class Block(FrozenModel):
    height: conint(strict=True, ge=0)
    prev_hash: StrictStr
    timestamp: conint(strict=True, ge=0) = 0
    txs: Tuple[Transaction, ...] = ()
    validity: Tuple[bool, ...] = ()
    block_hash: StrictStr = ''


class TxValidationCode(str, Enum):
    valid = 'VALID'
    duplicate_txid = 'DUPLICATE_TXID'
    bad_payload = 'BAD_PAYLOAD'
    bad_creator_signature = 'BAD_CREATOR_SIGNATURE'
    endorsement_policy_failure = 'ENDORSEMENT_POLICY_FAILURE'
    mvcc_read_conflict = 'MVCC_READ_CONFLICT'
    timestamp_out_of_range = 'TIMESTAMP_OUT_OF_RANGE'


class WorldStateEntry(FrozenModel):
    key: StrictStr
    value: Optional[bytes] = None
    version: Version

    @property
    def is_deleted(self) -> bool:
        return self.value is None


class EndorsementPolicy(FrozenModel):
    required_peers: Tuple[NonEmptyStr, ...]
    rule: str = 'ALL'

    @validator('required_peers')
    def non_empty(cls, v):
        if not v:
            raise ValueError('an endorsement policy needs at least one peer')
        return tuple(sorted(set(v)))

    @validator('rule')
    def all_of(cls, v):
        if v != 'ALL':
            raise ValueError('only the ALL-of rule is supported')
        return v


class ErrorBody(FrozenModel):
    code: StrictStr
    message: StrictStr


class ResultEnvelope(FrozenModel):
    status: StrictStr
    payload: Any = None
    error: Optional[ErrorBody] = None


class SubmitResult(FrozenModel):
    tx_id: StrictStr
    code: TxValidationCode
    payload: Any = None


# contracts

class PolicyEntry(FrozenModel):
    key: StrictStr
    policy: Policy


class PolicySelector(FrozenModel):
    by: StrictStr
    domain_id: Optional[NonEmptyStr] = None
    device_id: Optional[NonEmptyStr] = None
    user_id: Optional[NonEmptyStr] = None
    key: Optional[NonEmptyStr] = None

    @root_validator(skip_on_failure=True)
    def complete(cls, values):
        needed = {'object': ('domain_id', 'device_id'), 'subject': ('user_id',), 'key': ('key',)}
        if values['by'] not in needed:
            raise ValueError('selector must be by object, subject or key')
        missing = [f for f in needed[values['by']] if not values.get(f)]
        if missing:
            raise ValueError(f'selector by {values["by"]} needs {", ".join(missing)}')
        return values

    @classmethod
    def by_object(cls, domain_id: str, device_id: str) -> 'PolicySelector':
        return cls(by='object', domain_id=domain_id, device_id=device_id)

    @classmethod
    def by_subject(cls, user_id: str) -> 'PolicySelector':
        return cls(by='subject', user_id=user_id)

    @classmethod
    def by_key(cls, key: str) -> 'PolicySelector':
        return cls(by='key', key=key)


class AccessAuditRecord(FrozenModel):
    tx_id: StrictStr
    request: AccessRequest
    decision: AccessDecision
    decided_at: StrictInt


# domains

class DataRecord(FrozenModel):
    device_id: NonEmptyStr
    domain_id: NonEmptyStr
    data_type: NonEmptyStr
    payload: bytes
    content_hash: StrictStr
    produced_at: StrictInt

    @root_validator(skip_on_failure=True)
    def hash_matches(cls, values):
        if hashlib.sha256(values['payload']).hexdigest() != values['content_hash']:
            raise ValueError('content_hash does not match payload')
        return values


class DataRecordEntry(FrozenModel):
    """On-chain part of a data record: the hash, never the payload."""
    device_id: NonEmptyStr
    domain_id: NonEmptyStr
    data_type: NonEmptyStr
    content_hash: StrictStr
    produced_at: StrictInt


class AccessGrant(FrozenModel):
    tx_id: StrictStr
    subject: SubjectAttributes
    object_ref: ObjectRef
    operation: Operation
    issuer_domain: NonEmptyStr
    issuer: IdentityCertificate
    signature: StrictStr = ''


class MessageType(str, Enum):
    forward_request = 'ForwardRequest'
    forward_response = 'ForwardResponse'
    block_fetch = 'BlockFetch'
    block_response = 'BlockResponse'
    invoke = 'Invoke'
    invoke_result = 'InvokeResult'
    data_get = 'DataGet'
    data_response = 'DataResponse'
    ingest = 'Ingest'
    ingest_result = 'IngestResult'
    ping = 'Ping'
    pong = 'Pong'
    error = 'Error'


class WireMessage(FrozenModel):
    type: MessageType
    body: Dict[str, Any] = {}


class CaConfig(FrozenModel):
    ca_id: NonEmptyStr
    org_id: NonEmptyStr
    key_path: Path
    registrar_id: NonEmptyStr = 'admin'


class DomainConfig(FrozenModel):
    domain_id: NonEmptyStr
    org_id: NonEmptyStr
    peer_id: NonEmptyStr
    endpoint: NonEmptyStr
    peers: Dict[str, str] = {}
    ddss_root: Path
    archive_path: Path
    identity_path: Path

    @validator('endpoint')
    def host_port(cls, v):
        host, _, port = v.rpartition(':')
        if not host or not port.isdigit():
            raise ValueError('endpoint must be host:port')
        return v

    @property
    def host(self) -> str:
        return self.endpoint.rpartition(':')[0]

    @property
    def port(self) -> int:
        return int(self.endpoint.rpartition(':')[2])


class NetworkConfig(FrozenModel):
    channel: NonEmptyStr = 'mychannel'
    registry_database_url: NonEmptyStr
    orderer_org: NonEmptyStr = 'orderer'
    orderer_id: NonEmptyStr = 'orderer0'
    orderer_archive_path: Path
    orderer_identity_path: Path
    cas: Tuple[CaConfig, ...]
    domains: Tuple[DomainConfig, ...]

    @validator('domains')
    def unique_domains(cls, v):
        ids = [d.domain_id for d in v]
        if not ids or len(set(ids)) != len(ids):
            raise ValueError('domain ids must be present and unique')
        return v

    def domain(self, domain_id: str) -> Optional[DomainConfig]:
        return next((d for d in self.domains if d.domain_id == domain_id), None)

    def ca_for_org(self, org_id: str) -> Optional[CaConfig]:
        return next((c for c in self.cas if c.org_id == org_id), None)


class DomainTopology(FrozenModel):
    domain_id: NonEmptyStr
    org_id: NonEmptyStr
    endpoint: NonEmptyStr


class Topology(FrozenModel):
    """Declarative input of ``net init``."""
    channel: NonEmptyStr = 'mychannel'
    orderer_org: NonEmptyStr = 'orderer'
    domains: List[DomainTopology]


# bench

class BenchFunction(str, Enum):
    add_policy = 'AddPolicy'
    update_policy = 'UpdatePolicy'
    query_policy = 'QueryPolicy'
    delete_policy = 'DeletePolicy'
    check_access = 'CheckAccess'


class BenchScenario(FrozenModel):
    function: BenchFunction
    send_rate_tps: float
    total_tx: StrictInt
    warmup_tx: StrictInt = 10

    @validator('send_rate_tps')
    def positive_rate(cls, v):
        if v <= 0:
            raise ValueError('send_rate_tps must be positive')
        return v

    @validator('total_tx')
    def at_least_one(cls, v):
        if v < 1:
            raise ValueError('total_tx must be at least 1')
        return v

    @validator('warmup_tx')
    def non_negative(cls, v):
        if v < 0:
            raise ValueError('warmup_tx must not be negative')
        return v


class FunctionReport(FrozenModel):
    function: BenchFunction
    send_rate_tps: float
    submitted: int
    succeeded: int
    failed: int
    min_latency: float
    avg_latency: float
    max_latency: float
    throughput: float
    submission_span: float

    @root_validator(skip_on_failure=True)
    def consistent(cls, values):
        if values['succeeded'] + values['failed'] != values['submitted']:
            raise ValueError('succeeded + failed must equal submitted')
        return values


class BenchReport(FrozenModel):
    scenario: BenchScenario
    result: FunctionReport


class SuiteReport(FrozenModel):
    reports: Tuple[BenchReport, ...]
    table: str
