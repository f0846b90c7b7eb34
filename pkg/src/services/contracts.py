"""
The two on-chain contracts. PolicyContract administers policies; AccessContract supplies
request attributes, decides access, audits every decision and handles delegation.

Contract functions only touch state through the simulation context and only read time
from the proposal timestamp, so every endorser computes the same result.
"""
from __future__ import annotations

import inspect
import json
import logging
from collections.abc import Callable
from typing import Any, Optional

from pydantic import ValidationError

from src.exceptions import (InvalidPolicy, KeyMismatch, MalformedRequest, NotFound, NotOwner, PolicyExists,
                            Unauthorized, UnknownFunction, UnknownUser)
from src.schemas import (AccessAuditRecord, AccessRequest, ContractName, DataRecordEntry, IdentityCertificate,
                         ObjectRef, Operation, Policy, PolicyEntry, PolicySelector, RoleClass)
from src.services import abac, canonical
from src.services.identity import MembershipService
from src.services.ledger import TxContext

logger = logging.getLogger(__name__)

AUDIT_PREFIX = 'audit/'
DATA_PREFIX = 'data/'


def audit_key(tx_id: str) -> str:
    return f'{AUDIT_PREFIX}{tx_id}'


def data_key(domain_id: str, device_id: str, content_hash: str) -> str:
    return f'{DATA_PREFIX}{domain_id}/{device_id}/{content_hash}'


def data_prefix(domain_id: str, device_id: str) -> str:
    return f'{DATA_PREFIX}{domain_id}/{device_id}/'


def split_policy_key(key: str) -> Optional[tuple[str, str, str]]:
    """
    The split_policy_key function returns (domain_id, device_id, user_id) of a policy key.

    :param key: str: State key
    :return: The three components, or None when key is not a policy key
    """
    if not key.startswith(abac.POLICY_PREFIX):
        return None
    parts = key[len(abac.POLICY_PREFIX):].split('/')
    if len(parts) != 3 or not all(parts):
        return None
    return parts[0], parts[1], parts[2]


def _argument(raw: str) -> Any:
    try:
        return canonical.loads(raw)
    except json.JSONDecodeError:
        raise MalformedRequest(f'argument is not a canonical document: {raw[:40]!r}')


def _string(raw: str) -> str:
    value = _argument(raw)
    if not isinstance(value, str):
        raise MalformedRequest('expected a string argument')
    return value


class Contract:
    """Dispatches a proposal to one of the contract's named functions."""
    name: ContractName

    def __init__(self, msp: MembershipService):
        self.msp = msp
        self.functions: dict[str, Callable[..., Any]] = {}

    def invoke(self, ctx: TxContext) -> Any:
        handler = self.functions.get(ctx.proposal.function)
        if handler is None:
            raise UnknownFunction(f'{self.name.value} has no function {ctx.proposal.function}')
        try:
            inspect.signature(handler).bind(ctx, *ctx.proposal.args)
        except TypeError as err:
            raise MalformedRequest(f'{ctx.proposal.function}: {err}')
        return handler(ctx, *ctx.proposal.args)

    def caller(self, ctx: TxContext) -> IdentityCertificate:
        return self.msp.require(ctx.creator)

    def read_policy(self, ctx: TxContext, key: str) -> Optional[Policy]:
        raw = ctx.get_state(key)
        return None if raw is None else Policy.parse_raw(raw)


def _parse_policy(raw: Any) -> Policy:
    result = abac.validate_policy(raw)
    if not result.ok:
        raise InvalidPolicy(list(result.violations))
    policy = Policy.parse_obj(raw)
    violations = abac.key_violations(policy)
    if violations:
        raise InvalidPolicy(violations)
    return policy


def expired(policy: Policy, now: int) -> bool:
    return now > policy.ea.end_time


class PolicyContract(Contract):
    """Policy administration point: every mutator is reserved to the local admin of the policy's domain."""
    name = ContractName.policy

    def __init__(self, msp: MembershipService):
        super().__init__(msp)
        self.functions = {
            'ValidatePolicy': self.validate_policy,
            'AddPolicy': self.add_policy,
            'UpdatePolicy': self.update_policy,
            'DeletePolicy': self.delete_policy,
            'QueryPolicy': self.query_policy,
            'SweepExpired': self.sweep_expired,
        }

    def _require_admin(self, ctx: TxContext, domain_id: str) -> IdentityCertificate:
        cert = self.caller(ctx)
        if cert.role_class != RoleClass.local_admin or cert.attributes.domain_id != domain_id:
            raise Unauthorized(f'{cert.subject_id} is not the local admin of {domain_id}')
        return cert

    def validate_policy(self, ctx: TxContext, raw: str) -> dict:
        result = abac.validate_policy(_argument(raw))
        return {'ok': result.ok, 'violations': list(result.violations)}

    def add_policy(self, ctx: TxContext, raw: str) -> str:
        policy = _parse_policy(_argument(raw))
        self._require_admin(ctx, policy.oa.domain_id)
        key = abac.policy_key(policy)
        if ctx.get_state(key) is not None:
            raise PolicyExists(f'policy {key} already exists')
        ctx.put_state(key, canonical.dumps(policy))
        return key

    def update_policy(self, ctx: TxContext, key: str, raw: str) -> bool:
        key = _string(key)
        policy = _parse_policy(_argument(raw))
        if abac.policy_key(policy) != key:
            raise KeyMismatch(f'policy belongs at {abac.policy_key(policy)}, not {key}')
        self._require_admin(ctx, policy.oa.domain_id)
        if ctx.get_state(key) is None:
            raise NotFound(f'no policy at {key}')
        ctx.put_state(key, canonical.dumps(policy))
        return True

    def delete_policy(self, ctx: TxContext, key: str) -> bool:
        key = _string(key)
        parts = split_policy_key(key)
        if parts is None:
            raise NotFound(f'{key} is not a policy key')
        self._require_admin(ctx, parts[0])
        if ctx.get_state(key) is None:
            raise NotFound(f'no policy at {key}')
        ctx.delete_state(key)
        return True

    def live_policies(self, ctx: TxContext, selector: PolicySelector) -> list[PolicyEntry]:
        """
        The live_policies function returns the policies matching a selector, key-sorted.
        Expired policies are left out and tombstoned in the current write set.

        :param ctx: TxContext: Simulation context
        :param selector: PolicySelector: by object, by subject or by key
        :return: Matching live policies
        """
        entries = [PolicyEntry(key=key, policy=Policy.parse_raw(raw)) for key, raw in self._select(ctx, selector)]
        live = []
        for entry in entries:
            if expired(entry.policy, ctx.timestamp):
                ctx.delete_state(entry.key)
                logger.debug('policy %s expired at %d', entry.key, entry.policy.ea.end_time)
            else:
                live.append(entry)
        return live

    def _select(self, ctx: TxContext, selector: PolicySelector) -> list[tuple[str, bytes]]:
        if selector.by == 'key':
            raw = ctx.get_state(selector.key)
            return [] if raw is None or split_policy_key(selector.key) is None else [(selector.key, raw)]
        if selector.by == 'object':
            return ctx.get_state_by_prefix(abac.object_prefix(selector.domain_id, selector.device_id))
        return [(key, raw) for key, raw in ctx.get_state_by_prefix(abac.POLICY_PREFIX)
                if key.rsplit('/', 1)[-1] == selector.user_id]

    def query_policy(self, ctx: TxContext, raw: str) -> list[dict]:
        self.caller(ctx)
        try:
            selector = PolicySelector.parse_obj(_argument(raw))
        except ValidationError as err:
            raise MalformedRequest(str(err))
        return [canonical.to_document(entry) for entry in self.live_policies(ctx, selector)]

    def sweep_expired(self, ctx: TxContext) -> list[str]:
        cert = self.caller(ctx)
        if cert.role_class != RoleClass.local_admin:
            raise Unauthorized(f'{cert.subject_id} is not a local admin')
        swept = []
        for key, raw in ctx.get_state_by_prefix(f'{abac.POLICY_PREFIX}{cert.attributes.domain_id}/'):
            if expired(Policy.parse_raw(raw), ctx.timestamp):
                ctx.delete_state(key)
                swept.append(key)
        return swept


class AccessContract(Contract):
    """Policy information and decision point, plus delegation, revocation and data records."""
    name = ContractName.access

    def __init__(self, msp: MembershipService):
        super().__init__(msp)
        self.functions = {
            'GetAtts': self.get_atts,
            'CheckAccess': self.check_access,
            'DelegateAccess': self.delegate_access,
            'RevokeAccess': self.revoke_access,
            'RecordData': self.record_data,
        }

    def request_of(self, ctx: TxContext, raw: str) -> AccessRequest:
        """
        The request_of function builds the access request of a transaction.
        Subject attributes come from the caller's verified certificate only; the request
        time is the proposal timestamp.

        :param ctx: TxContext: Simulation context
        :param raw: str: Canonical {object_ref, operation, client_ip} document
        :return: The access request
        """
        cert = self.caller(ctx)
        body = _argument(raw)
        if not isinstance(body, dict):
            raise MalformedRequest('access request must be a document')
        try:
            return AccessRequest(subject=cert.attributes, object_ref=ObjectRef.parse_obj(body.get('object_ref')),
                                 operation=Operation(body.get('operation')), client_ip=body.get('client_ip'),
                                 request_time=ctx.timestamp)
        except (ValidationError, ValueError) as err:
            raise MalformedRequest(f'malformed access request: {err}')

    def get_atts(self, ctx: TxContext, raw: str) -> dict:
        return canonical.to_document(self.request_of(ctx, raw))

    def check_access(self, ctx: TxContext, raw: str) -> dict:
        request = self.request_of(ctx, raw)
        prefix = abac.object_prefix(request.object_ref.domain_id, request.object_ref.device_id)
        candidates = []
        for key, value in ctx.get_state_by_prefix(prefix):
            policy = Policy.parse_raw(value)
            if expired(policy, ctx.timestamp):
                ctx.delete_state(key)
            candidates.append(PolicyEntry(key=key, policy=policy))
        decision = abac.select_decision(request, candidates)
        record = AccessAuditRecord(tx_id=ctx.tx_id, request=request, decision=decision, decided_at=ctx.timestamp)
        ctx.put_state(audit_key(ctx.tx_id), canonical.dumps(record))
        return canonical.to_document(decision)

    def _owned(self, ctx: TxContext, raw_key: str) -> tuple[str, Policy]:
        key = _string(raw_key)
        policy = self.read_policy(ctx, key) if split_policy_key(key) else None
        if policy is None:
            raise NotFound(f'no policy at {key}')
        cert = self.caller(ctx)
        is_admin = (cert.role_class == RoleClass.local_admin
                    and cert.attributes.domain_id == policy.oa.domain_id)
        if not is_admin and cert.attributes.user_id not in policy.oa.owner_ids:
            raise NotOwner(f'{cert.attributes.user_id} does not own {key}')
        return key, policy

    def delegate_access(self, ctx: TxContext, raw_key: str, raw_user: str) -> bool:
        key, policy = self._owned(ctx, raw_key)
        new_owner = _string(raw_user)
        if not self.msp.is_enrolled(new_owner):
            raise UnknownUser(f'{new_owner} is not enrolled in the network')
        delegated = abac.with_owner(policy, new_owner)
        ctx.put_state(key, canonical.dumps(delegated))
        return True

    def revoke_access(self, ctx: TxContext, raw_key: str, raw_operation: str) -> bool:
        key, policy = self._owned(ctx, raw_key)
        try:
            operation = Operation(_string(raw_operation))
        except ValueError:
            raise MalformedRequest('operation must be Read or Write')
        ctx.put_state(key, canonical.dumps(abac.with_permission(policy, operation, 0)))
        return True

    def record_data(self, ctx: TxContext, raw: str) -> str:
        cert = self.caller(ctx)
        try:
            entry = DataRecordEntry.parse_obj(_argument(raw))
        except ValidationError as err:
            raise MalformedRequest(f'malformed data record: {err}')
        if cert.role_class != RoleClass.peer or cert.attributes.domain_id != entry.domain_id:
            raise Unauthorized(f'{cert.subject_id} may not record data for {entry.domain_id}')
        key = data_key(entry.domain_id, entry.device_id, entry.content_hash)
        ctx.put_state(key, canonical.dumps(entry))
        return key


class ContractRegistry:
    """Routes a proposal to the contract it names."""

    def __init__(self, msp: MembershipService):
        self.contracts: dict[ContractName, Contract] = {
            ContractName.policy: PolicyContract(msp),
            ContractName.access: AccessContract(msp),
        }

    def invoke(self, ctx: TxContext) -> Any:
        return self.contracts[ctx.proposal.contract].invoke(ctx)
