import ipaddress
import itertools

import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st

from src.schemas import (AccessRequest, Attribute, ObjectRef, Operation, PermissionAttributes, Policy, PolicyEntry,
                         Reason, SubjectAttributes, Verdict)
from src.services import abac

START, END = 1000, 2000

SUBJECTS = [
    SubjectAttributes(user_id='alice', role='doctor', domain_id='domA'),
    SubjectAttributes(user_id='alice', role='nurse', domain_id='domA'),
    SubjectAttributes(user_id='bob', role='doctor', domain_id='domB'),
    SubjectAttributes(user_id='carol', role='nurse', domain_id='domA'),
]
OBJECTS = [ObjectRef(device_id='d1', domain_id='domA'), ObjectRef(device_id='d2', domain_id='domA'),
           ObjectRef(device_id='d1', domain_id='domB')]
TIMES = [START - 1, START, 1500, END, END + 1]
IPS = ['10.0.0.5', '10.255.255.255', '192.168.1.5']


def policy(owners=('alice',), read=1, write=1, allowed_ip='10.0.0.0/8', start=START, end=END, device='d1',
           domain='domA'):
    return Policy.parse_obj({
        'sa': {'user_id': 'alice', 'role': 'doctor', 'domain_id': 'domA'},
        'oa': {'device_id': device, 'domain_id': domain, 'owner_ids': list(owners), 'data_type': 'temperature'},
        'pa': {'read': read, 'write': write},
        'ea': {'allowed_ip': allowed_ip, 'start_time': start, 'end_time': end},
    })


POLICIES = [policy(), policy(owners=('carol',)), policy(read=0), policy(write=0), policy(allowed_ip='10.0.0.5'),
            policy(owners=('alice', 'bob'), allowed_ip='0.0.0.0/0')]


def oracle(req, p):
    if req.object_ref.device_id != p.oa.device_id or req.object_ref.domain_id != p.oa.domain_id:
        return Verdict.reject, Reason.no_policy
    if not (req.subject.user_id in p.oa.owner_ids or (req.subject.user_id, req.subject.role, req.subject.domain_id)
            == (p.sa.user_id, p.sa.role, p.sa.domain_id)):
        return Verdict.reject, Reason.subject_mismatch
    if (p.pa.read if req.operation == Operation.read else p.pa.write) != 1:
        return Verdict.reject, Reason.permission_denied
    if req.request_time > p.ea.end_time:
        return Verdict.reject, Reason.policy_expired
    if req.request_time < p.ea.start_time:
        return Verdict.reject, Reason.outside_time_window
    if ipaddress.ip_address(req.client_ip) not in ipaddress.ip_network(p.ea.allowed_ip, strict=False):
        return Verdict.reject, Reason.ip_not_allowed
    return Verdict.approve, Reason.match


def request(subject=SUBJECTS[0], object_ref=OBJECTS[0], operation=Operation.read, client_ip='10.0.0.5',
            request_time=1500):
    return AccessRequest(subject=subject, object_ref=object_ref, operation=operation, client_ip=client_ip,
                         request_time=request_time)


def test_match_policy_agrees_with_oracle_on_small_universe():
    for p, subject, obj, op, t, ip in itertools.product(POLICIES, SUBJECTS, OBJECTS, Operation, TIMES, IPS):
        req = request(subject, obj, op, ip, t)
        decision = abac.match_policy(req, p)
        assert (decision.verdict, decision.reason) == oracle(req, p), (p, req)
        if decision.verdict == Verdict.approve:
            assert decision.matched_policy_key == 'policy/domA/d1/alice'


def test_matching_request_is_approved():
    decision = abac.match_policy(request(), policy())
    assert decision.verdict == Verdict.approve
    assert decision.reason == Reason.match


@pytest.mark.parametrize('req, p, reason', [
    (request(object_ref=OBJECTS[1]), policy(), Reason.no_policy),
    (request(subject=SUBJECTS[2]), policy(), Reason.subject_mismatch),
    (request(), policy(read=0), Reason.permission_denied),
    (request(operation=Operation.write), policy(write=0), Reason.permission_denied),
    (request(request_time=START - 10), policy(), Reason.outside_time_window),
    (request(request_time=END + 10), policy(), Reason.policy_expired),
    (request(client_ip='192.168.1.5'), policy(), Reason.ip_not_allowed),
])
def test_first_failing_check_names_the_reason(req, p, reason):
    decision = abac.match_policy(req, p)
    assert decision.verdict == Verdict.reject
    assert decision.reason == reason
    assert decision.matched_policy_key is None


def test_window_bounds_are_inclusive():
    assert abac.match_policy(request(request_time=START), policy()).verdict == Verdict.approve
    assert abac.match_policy(request(request_time=END), policy()).verdict == Verdict.approve


def test_owner_passes_subject_check_without_matching_sa():
    carol = SUBJECTS[3]
    assert abac.match_policy(request(subject=carol), policy()).reason == Reason.subject_mismatch
    delegated = abac.with_owner(policy(), 'carol')
    assert abac.match_policy(request(subject=carol), delegated).verdict == Verdict.approve


def test_single_address_allowed_ip():
    p = policy(allowed_ip='10.0.0.5')
    assert abac.match_policy(request(client_ip='10.0.0.5'), p).verdict == Verdict.approve
    assert abac.match_policy(request(client_ip='10.0.0.6'), p).reason == Reason.ip_not_allowed


def test_select_decision_without_candidates_is_no_policy():
    decision = abac.select_decision(request(), [])
    assert decision.verdict == Verdict.reject
    assert decision.reason == Reason.no_policy


def test_select_decision_permit_overrides():
    denied = policy(read=0)
    other = policy(device='d1').copy(update={'sa': SUBJECTS[2]})
    entries = [PolicyEntry(key='policy/domA/d1/alice', policy=denied),
               PolicyEntry(key='policy/domA/d1/bob', policy=abac.with_owner(other, 'alice'))]
    decision = abac.select_decision(request(), entries)
    assert decision.verdict == Verdict.approve
    assert decision.matched_policy_key == 'policy/domA/d1/bob'


def test_select_decision_reports_furthest_check():
    entries = [policy(owners=('carol',)).copy(update={'sa': SUBJECTS[2]}), policy(allowed_ip='172.16.0.0/12')]
    decision = abac.select_decision(request(), entries)
    assert decision.reason == Reason.ip_not_allowed


def test_policy_key_and_prefix():
    p = policy()
    assert abac.policy_key(p) == 'policy/domA/d1/alice'
    assert abac.policy_key(p).startswith(abac.object_prefix('domA', 'd1'))


def test_key_violations_reject_delimiter():
    assert abac.key_violations(policy(device='d/1')) == ['oa.device_id: must not contain "/"']
    assert abac.key_violations(policy()) == []


def test_validate_policy_accepts_valid_document():
    result = abac.validate_policy(policy().dict())
    assert result.ok
    assert result.violations == ()


def test_validate_policy_reports_missing_components():
    raw = policy().dict()
    del raw['ea']
    del raw['pa']
    result = abac.validate_policy(raw)
    assert not result.ok
    assert 'missing PA' in result.violations
    assert 'missing EA' in result.violations


def test_validate_policy_reports_every_violation():
    raw = policy().dict()
    raw['pa'] = {'read': 2, 'write': 1}
    raw['ea'] = {'allowed_ip': 'not-an-address', 'start_time': 10, 'end_time': 20}
    raw['oa'] = dict(raw['oa'], owner_ids=[])
    result = abac.validate_policy(raw)
    assert not result.ok
    assert any(v.startswith('PA.read') for v in result.violations)
    assert any(v.startswith('EA.allowed_ip') for v in result.violations)
    assert any(v.startswith('OA.owner_ids') for v in result.violations)


def test_validate_policy_rejects_inverted_window():
    raw = policy().dict()
    raw['ea'] = {'allowed_ip': '10.0.0.0/8', 'start_time': 20, 'end_time': 10}
    result = abac.validate_policy(raw)
    assert result.violations == ('EA: start_time after end_time',)


def test_validate_policy_rejects_non_document():
    assert not abac.validate_policy(['sa', 'oa']).ok


def test_default_permissions_are_granted():
    assert PermissionAttributes() == PermissionAttributes(read=1, write=1)


def test_with_permission_and_with_owner():
    p = policy()
    assert abac.with_permission(p, Operation.read, 0).pa.read == 0
    assert abac.with_permission(p, Operation.read, 0).pa.write == 1
    assert abac.with_owner(p, 'alice') == p
    assert abac.with_owner(p, 'bob').oa.owner_ids == ('alice', 'bob')


def test_attributes_of_flattens_owner_set():
    attributes = abac.attributes_of(policy(owners=('alice', 'bob')))
    assert Attribute(name='oa.owner_id', value='alice') in attributes
    assert Attribute(name='oa.owner_id', value='bob') in attributes
    assert Attribute(name='pa.read', value=1) in attributes


requests = st.builds(
    request,
    subject=st.sampled_from(SUBJECTS),
    object_ref=st.sampled_from(OBJECTS),
    operation=st.sampled_from(list(Operation)),
    client_ip=st.sampled_from(IPS),
    request_time=st.integers(min_value=0, max_value=3000),
)


@given(req=requests, p=st.sampled_from(POLICIES))
def test_match_policy_is_deterministic(req, p):
    assert abac.match_policy(req, p) == abac.match_policy(req, p)
    assert (abac.match_policy(req, p).verdict, abac.match_policy(req, p).reason) == oracle(req, p)


@given(req=requests, candidates=st.lists(st.sampled_from(POLICIES), max_size=4, unique=True), data=st.data())
def test_select_decision_ignores_candidate_order(req, candidates, data):
    entries = [PolicyEntry(key=f'policy/domA/d1/p{i}', policy=p) for i, p in enumerate(candidates)]
    reordered = data.draw(st.permutations(entries))
    assert abac.select_decision(req, entries) == abac.select_decision(req, reordered)


@given(req=requests, p=st.sampled_from(POLICIES))
def test_approval_needs_some_approving_candidate(req, p):
    single = abac.match_policy(req, p)
    combined = abac.select_decision(req, [p])
    assert single.verdict == combined.verdict


@hypothesis_settings(max_examples=200)
@given(st.dictionaries(st.sampled_from(['sa', 'oa', 'pa', 'ea', 'x']),
                       st.one_of(st.none(), st.integers(), st.text(max_size=5),
                                 st.dictionaries(st.text(max_size=8), st.integers()))))
def test_validate_policy_never_raises(raw):
    result = abac.validate_policy(raw)
    assert result.ok == (not result.violations)
    assert not result.ok


def entries_of(policies):
    return [PolicyEntry(key=f'policy/domA/d1/p{i}', policy=p) for i, p in enumerate(policies)]


@given(req=requests, candidates=st.lists(st.sampled_from(POLICIES), min_size=1, max_size=4, unique=True),
       data=st.data())
def test_revoking_a_permission_never_grants_access(req, candidates, data):
    index = data.draw(st.integers(min_value=0, max_value=len(candidates) - 1))
    operation = data.draw(st.sampled_from(list(Operation)))
    revoked = list(candidates)
    revoked[index] = abac.with_permission(candidates[index], operation, 0)
    before = abac.select_decision(req, entries_of(candidates))
    after = abac.select_decision(req, entries_of(revoked))
    if before.verdict == Verdict.reject:
        assert after.verdict == Verdict.reject
    if abac.match_policy(req, revoked[index]).verdict == Verdict.approve:
        assert abac.match_policy(req, candidates[index]).verdict == Verdict.approve


@given(req=requests, candidates=st.lists(st.sampled_from(POLICIES), min_size=1, max_size=4, unique=True),
       data=st.data())
def test_delegating_never_withdraws_access(req, candidates, data):
    index = data.draw(st.integers(min_value=0, max_value=len(candidates) - 1))
    user_id = data.draw(st.sampled_from(['alice', 'bob', 'carol', 'dave']))
    delegated = list(candidates)
    delegated[index] = abac.with_owner(candidates[index], user_id)
    before = abac.select_decision(req, entries_of(candidates))
    after = abac.select_decision(req, entries_of(delegated))
    if before.verdict == Verdict.approve:
        assert after.verdict == Verdict.approve
    if abac.match_policy(req, candidates[index]).verdict == Verdict.approve:
        assert abac.match_policy(req, delegated[index]).verdict == Verdict.approve
