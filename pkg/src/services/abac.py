"""
Attribute-based access control: the policy data model and its matching rules.

Pure functions over immutable values; no ledger or I/O access happens here.
"""
import ipaddress
from collections.abc import Mapping, Sequence
from typing import Any, Optional, Union

from pydantic import BaseModel, ValidationError

from src.schemas import (AccessDecision, AccessRequest, Attribute, Operation, Policy, PolicyEntry, Reason,
                         ValidationResult, Verdict)

POLICY_PREFIX = 'policy/'
KEY_DELIMITER = '/'
COMPONENTS = {'sa': 'SA', 'oa': 'OA', 'pa': 'PA', 'ea': 'EA'}

# index of each check in the fixed evaluation order
OBJECT, SUBJECT, PERMISSION, TIME, IP = range(5)


def policy_key(policy: Policy) -> str:
    """
    The policy_key function derives the state key of a policy.
    One policy exists per (domain, device, subject).

    :param policy: Policy: The policy
    :return: Key of the form policy/{domain_id}/{device_id}/{user_id}
    """
    return f'{POLICY_PREFIX}{policy.oa.domain_id}/{policy.oa.device_id}/{policy.sa.user_id}'


def object_prefix(domain_id: str, device_id: str) -> str:
    return f'{POLICY_PREFIX}{domain_id}/{device_id}/'


def key_violations(policy: Policy) -> list[str]:
    """
    The key_violations function lists key components that contain the reserved delimiter.

    :param policy: Policy: The policy whose key would be derived
    :return: A list of violations, empty when the key is well formed
    """
    parts = {'oa.domain_id': policy.oa.domain_id, 'oa.device_id': policy.oa.device_id,
             'sa.user_id': policy.sa.user_id}
    return [f'{name}: must not contain "{KEY_DELIMITER}"' for name, value in parts.items() if KEY_DELIMITER in value]


def _describe(error: dict) -> str:
    loc = [str(part) for part in error['loc'] if part != '__root__']
    if loc and loc[0] in COMPONENTS:
        loc[0] = COMPONENTS[loc[0]]
    return f'{".".join(loc)}: {error["msg"]}' if loc else error['msg']


def validate_policy(raw: Any) -> ValidationResult:
    """
    The validate_policy function checks a parsed policy document against the four-component schema.
    Every violation is reported, not only the first one.

    :param raw: Any: A structurally parsed document
    :return: ValidationResult with ok set iff there are no violations
    """
    if isinstance(raw, BaseModel):
        raw = raw.dict()
    if not isinstance(raw, Mapping):
        return ValidationResult(ok=False, violations=('policy must be a document',))
    violations = [f'missing {label}' for name, label in COMPONENTS.items() if name not in raw]
    try:
        Policy.parse_obj(raw)
    except ValidationError as err:
        for error in err.errors():
            if len(error['loc']) == 1 and error['loc'][0] in COMPONENTS and error['type'] == 'value_error.missing':
                continue
            violations.append(_describe(error))
    return ValidationResult(ok=not violations, violations=tuple(violations))


def _failed_check(req: AccessRequest, p: Policy) -> tuple[int, Optional[Reason]]:
    if (req.object_ref.device_id, req.object_ref.domain_id) != (p.oa.device_id, p.oa.domain_id):
        return OBJECT, Reason.no_policy
    if req.subject.user_id not in p.oa.owner_ids and req.subject != p.sa:
        return SUBJECT, Reason.subject_mismatch
    bit = p.pa.read if req.operation == Operation.read else p.pa.write
    if bit != 1:
        return PERMISSION, Reason.permission_denied
    if req.request_time > p.ea.end_time:
        return TIME, Reason.policy_expired
    if req.request_time < p.ea.start_time:
        return TIME, Reason.outside_time_window
    if ipaddress.IPv4Address(req.client_ip) not in p.ea.network():
        return IP, Reason.ip_not_allowed
    return IP + 1, None


def match_policy(req: AccessRequest, p: Policy, key: Optional[str] = None) -> AccessDecision:
    """
    The match_policy function evaluates one request against one policy.
    Checks run in a fixed order (object, subject, permission, time, ip) and the first
    failing check names the reject reason. Owners listed in oa.owner_ids pass the subject
    check without matching sa.

    :param req: AccessRequest: The request
    :param p: Policy: A validated policy
    :param key: Optional[str]: State key of the policy, derived from it when omitted
    :return: The access decision
    """
    _, reason = _failed_check(req, p)
    if reason is None:
        return AccessDecision(verdict=Verdict.approve, reason=Reason.match, matched_policy_key=key or policy_key(p))
    return AccessDecision(verdict=Verdict.reject, reason=reason)


Candidate = Union[Policy, PolicyEntry]


def _keyed(candidate: Candidate) -> tuple[str, Policy]:
    if isinstance(candidate, PolicyEntry):
        return candidate.key, candidate.policy
    return policy_key(candidate), candidate


def select_decision(req: AccessRequest, candidates: Sequence[Candidate]) -> AccessDecision:
    """
    The select_decision function combines several candidate policies with permit-overrides.
    The smallest approving key wins; when all reject, the reason comes from the candidate
    that got furthest through the check order (smallest key on ties).

    :param req: AccessRequest: The request
    :param candidates: Sequence[Candidate]: Policies or (key, policy) entries, possibly empty
    :return: The access decision
    """
    best_stage, best_reason = -1, Reason.no_policy
    for key, policy in sorted((_keyed(c) for c in candidates), key=lambda kp: kp[0]):
        stage, reason = _failed_check(req, policy)
        if reason is None:
            return AccessDecision(verdict=Verdict.approve, reason=Reason.match, matched_policy_key=key)
        if stage > best_stage:
            best_stage, best_reason = stage, reason
    return AccessDecision(verdict=Verdict.reject, reason=best_reason)


def with_owner(policy: Policy, user_id: str) -> Policy:
    """
    The with_owner function returns the policy with user_id added to its owner set.
    Adding an existing owner returns an equal policy.

    :param policy: Policy: The policy to delegate
    :param user_id: str: New owner
    :return: The updated policy
    """
    if user_id in policy.oa.owner_ids:
        return policy
    oa = policy.oa.copy(update={'owner_ids': tuple(sorted(policy.oa.owner_ids + (user_id,)))})
    return policy.copy(update={'oa': oa})


def with_permission(policy: Policy, operation: Operation, bit: int) -> Policy:
    field = 'read' if operation == Operation.read else 'write'
    return policy.copy(update={'pa': policy.pa.copy(update={field: bit})})


def attributes_of(policy: Policy) -> tuple[Attribute, ...]:
    """
    The attributes_of function flattens a policy into name/value attribute pairs.
    Each owner contributes one oa.owner_id attribute.

    :param policy: Policy: The policy
    :return: The attribute pairs in component order
    """
    attributes = []
    for component in COMPONENTS:
        for name, value in getattr(policy, component).dict().items():
            values = value if isinstance(value, tuple) else (value,)
            label = 'owner_id' if name == 'owner_ids' else name
            attributes.extend(Attribute(name=f'{component}.{label}', value=v) for v in values)
    return tuple(attributes)
