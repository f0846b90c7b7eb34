import asyncio
import random

import pytest

from src.conf.config import settings
from src.exceptions import (BadCertificate, BrokenChain, ClockSkew, EndorsementMismatch, MalformedRequest,
                            StateAccessOutsideSimulation)
from src.repository.archive import BlockArchive
from src.schemas import (ContractName, IdentityCertificate, ObjectRef, Operation, PolicySelector, Proposal, RoleClass,
                         SubjectAttributes, TxValidationCode, WorldStateEntry)
from src.services import abac, canonical, crypto
from src.services.edge import access_body
from src.services.gateway import new_proposal
from src.services.ledger import Peer, TxContext, WorldState, genesis_block, proposal_payload, replay, verify_blocks
from src.services.network import Network


def add_policy(identity, policy):
    return new_proposal(identity, ContractName.policy, 'AddPolicy', [policy])


def seeded(network, members, make_policy, count):
    policies = [make_policy(device=f'dev{i}') for i in range(count)]
    gateway = network.edge('domA').gateway
    results = gateway.submit_sync([add_policy(members['admin_a'], p) for p in policies])
    assert all(r.code == TxValidationCode.valid for r in results)
    return policies


def all_peers(network):
    return [network.sequencer.replica] + [edge.peer for edge in network.edges.values()]


def test_genesis_block():
    genesis = genesis_block()
    assert genesis.height == 0
    assert genesis.prev_hash == canonical.ZERO_HASH
    assert genesis.txs == ()
    assert verify_blocks([genesis]) is None


def test_chain_integrity_after_500_transactions(network, members, make_policy):
    seeded(network, members, make_policy, 500)
    heads = {peer.head_hash for peer in all_peers(network)}
    assert len(heads) == 1
    for peer in all_peers(network):
        assert peer.height == 51
        assert peer.verify_chain() is None
        assert peer.replay() == peer.state
        assert len(peer.state) == 500
    for domain in network.config.domains:
        blocks, bad = BlockArchive(domain.archive_path).scan()
        assert bad is None
        assert blocks == network.edge(domain.domain_id).peer.blocks()


def test_tampered_archive_is_always_detected(network, members, make_policy, tmp_path):
    seeded(network, members, make_policy, 30)
    source = network.config.domains[0].archive_path
    original = source.read_bytes()
    records = list(BlockArchive(source).records())
    rng = random.Random(7)
    for trial in range(50):
        height = rng.randrange(1, len(records))
        start = sum(4 + len(r) for r in records[:height]) + 4
        position = start + rng.randrange(len(records[height]))
        tampered = bytearray(original)
        tampered[position] ^= 0x01
        copy = tmp_path / f'tampered-{trial}.blocks'
        copy.write_bytes(bytes(tampered))
        blocks, bad = BlockArchive(copy).scan()
        broken = verify_blocks(blocks)
        assert bad is not None or broken is not None, f'undetected flip at byte {position}'
        assert min(h for h in (bad, broken) if h is not None) <= height


def test_mvcc_conflicting_pairs(network, members, make_policy):
    policies = seeded(network, members, make_policy, 100)
    gateway = network.edge('domA').gateway
    proposals = []
    for p in policies:
        key = abac.policy_key(p)
        proposals.append(new_proposal(members['admin_a'], ContractName.policy, 'UpdatePolicy',
                                      [key, abac.with_permission(p, Operation.write, 0)]))
        proposals.append(new_proposal(members['admin_a'], ContractName.policy, 'UpdatePolicy',
                                      [key, abac.with_permission(p, Operation.read, 0)]))
    results = gateway.submit_sync(proposals)
    firsts, seconds = results[0::2], results[1::2]
    assert all(r.code == TxValidationCode.valid for r in firsts)
    assert all(r.code == TxValidationCode.mvcc_read_conflict for r in seconds)
    peer = network.edge('domB').peer
    for p in policies:
        stored = canonical.loads(peer.get_state(abac.policy_key(p)).value)
        assert stored['pa'] == {'read': 1, 'write': 0}
    assert peer.replay() == peer.state
    assert peer.replay(honor_validity=False) != peer.state


def test_blocks_cut_at_max_block_txs(network, members, make_policy):
    start = network.sequencer.height
    seeded(network, members, make_policy, 25)
    blocks = network.sequencer.replica.blocks_from(start)
    assert [len(b.txs) for b in blocks] == [10, 10, 5]
    assert all(all(b.validity) for b in blocks)


def test_pending_transactions_cut_on_timeout(network, members, make_policy):
    edge = network.edge('domA')
    start = network.sequencer.height

    async def submit_all(count):
        proposals = [add_policy(members['admin_a'], make_policy(device=f'late{count}-{i}')) for i in range(count)]
        return await asyncio.gather(*(edge.submit(p) for p in proposals))

    results = asyncio.run(submit_all(3))
    assert all(r.code == TxValidationCode.valid for r in results)
    assert [len(b.txs) for b in network.sequencer.replica.blocks_from(start)] == [3]

    results = asyncio.run(submit_all(12))
    assert all(r.code == TxValidationCode.valid for r in results)
    assert [len(b.txs) for b in network.sequencer.replica.blocks_from(start + 1)] == [10, 2]
    assert network.ordering.pending == 0


def test_duplicate_transaction_is_invalidated(network, members, make_policy):
    gateway = network.edge('domA').gateway
    tx = gateway.endorse(add_policy(members['admin_a'], make_policy()))
    network.sequencer.order([tx])
    network.sequencer.order([tx])
    assert network.sequencer.replica.blocks()[-1].validity == (False,)
    assert network.edge('domB').peer.tx_code(tx.tx_id) == TxValidationCode.valid


def test_forged_creator_signature_is_invalidated(network, members, make_policy):
    gateway = network.edge('domA').gateway
    tx = gateway.endorse(add_policy(members['admin_a'], make_policy()))
    forged = tx.copy(update={'signature': crypto.sign(proposal_payload(tx.proposal()),
                                                      members['alice'].private_key)})
    network.sequencer.order([forged])
    assert network.sequencer.replica.tx_code(tx.tx_id) == TxValidationCode.bad_creator_signature
    assert network.edge('domA').peer.get_state(abac.policy_key(make_policy())) is None


def test_missing_endorsement_is_invalidated(network, members, make_policy):
    gateway = network.edge('domA').gateway
    tx = gateway.endorse(add_policy(members['admin_a'], make_policy()))
    network.sequencer.order([tx.copy(update={'endorsements': tx.endorsements[:1]})])
    assert network.sequencer.replica.tx_code(tx.tx_id) == TxValidationCode.endorsement_policy_failure


def test_changed_payload_is_invalidated(network, members, make_policy):
    gateway = network.edge('domA').gateway
    tx = gateway.endorse(add_policy(members['admin_a'], make_policy()))
    network.sequencer.order([tx.copy(update={'function': 'DeletePolicy'})])
    assert network.sequencer.replica.tx_code(tx.tx_id) == TxValidationCode.bad_payload


def test_endorsers_reject_forged_proposals(network, members, make_policy):
    peer = network.edge('domA').peer
    proposal = add_policy(members['admin_a'], make_policy())
    with pytest.raises(BadCertificate):
        peer.simulate(proposal.copy(update={'signature': crypto.sign(proposal_payload(proposal),
                                                                     members['alice'].private_key)}))
    with pytest.raises(MalformedRequest):
        peer.simulate(proposal.copy(update={'creator': members['alice'].certificate}))


def test_simulation_does_not_touch_world_state(network, members, make_policy):
    peer = network.edge('domA').peer
    before = peer.state.dumps()
    result = peer.simulate(add_policy(members['admin_a'], make_policy()))
    assert result.write_set[0].key == 'policy/domA/d1/alice'
    assert peer.state.dumps() == before


def test_endorsement_mismatch_when_peers_disagree(network, members, make_policy):
    seeded(network, members, make_policy, 1)
    stray = make_policy(device='dev0', user='mallory')
    network.edge('domB').peer.state.put_entry(
        WorldStateEntry(key=abac.policy_key(stray), value=canonical.dumps(stray), version=(99, 0)))
    proposal = new_proposal(members['alice'], ContractName.policy, 'QueryPolicy',
                            [PolicySelector.by_object('domA', 'dev0')])
    with pytest.raises(EndorsementMismatch):
        network.edge('domA').gateway.endorse(proposal)


def test_tampered_block_is_not_committed(network, members, make_policy):
    seeded(network, members, make_policy, 3)
    source = network.edge('domB').peer
    behind = Peer(source.identity, network.msp, network.contracts, network.policy)
    block = network.sequencer.replica.blocks()[1]
    forged_tx = block.txs[0].copy(update={'response': canonical.dumps_str('policy/domA/dev9/alice')})
    with pytest.raises(BrokenChain):
        behind.validate_and_commit(block.copy(update={'txs': (forged_tx,) + block.txs[1:]}))
    assert behind.height == 1
    assert len(behind.state) == 0
    for genuine in source.blocks_from(1):
        behind.validate_and_commit(genuine)
    assert behind.head_hash == source.head_hash
    assert behind.state == source.state


def test_peer_restores_state_from_archive(network, members, make_policy, provisioned):
    seeded(network, members, make_policy, 12)
    asyncio.run(network.stop())
    restarted = Network.load(provisioned[0] / 'network.json')
    for domain_id, edge in restarted.edges.items():
        original = network.edge(domain_id).peer
        assert edge.peer.height == original.height
        assert edge.peer.head_hash == original.head_hash
        assert edge.peer.state == original.state
    assert restarted.sequencer.replica.state == network.sequencer.replica.state


def test_damaged_archive_refuses_restore(network, members, make_policy, provisioned):
    seeded(network, members, make_policy, 2)
    archive = network.config.domains[0].archive_path
    data = bytearray(archive.read_bytes())
    data[-5] ^= 0x01
    archive.write_bytes(bytes(data))
    with pytest.raises(BrokenChain):
        Network.load(provisioned[0] / 'network.json')


def test_replay_rebuilds_state():
    assert replay([genesis_block()]) == WorldState()


def cert():
    return IdentityCertificate(subject_id='alice', role_class=RoleClass.user,
                               attributes=SubjectAttributes(user_id='alice', role='doctor', domain_id='domA'),
                               org_id='org1', ca_id='ca.org1', serial=1, issued_at=0, public_key='key')


def proposal_for_context():
    return Proposal(tx_id='t1', creator=cert(), contract=ContractName.policy, function='AddPolicy', timestamp=100,
                    nonce='n')


def test_get_state_does_not_see_buffered_writes():
    state = WorldState()
    ctx = TxContext(state, proposal_for_context())
    assert ctx.get_state('k') is None
    ctx.put_state('k', b'"v"')
    assert ctx.get_state('k') is None
    read_set, write_set = ctx.close()
    assert [r.key for r in read_set] == ['k']
    assert read_set[0].version is None
    assert write_set[0].value == '"v"'
    assert state.get('k') is None


def test_context_is_closed_after_simulation():
    ctx = TxContext(WorldState(), proposal_for_context())
    ctx.close()
    with pytest.raises(StateAccessOutsideSimulation):
        ctx.get_state('k')
    with pytest.raises(StateAccessOutsideSimulation):
        ctx.put_state('k', b'1')


def test_prefix_scan_skips_tombstones_and_records_reads():
    state = WorldState()
    state.put_entry(WorldStateEntry(key='policy/a', value=b'1', version=(1, 0)))
    state.put_entry(WorldStateEntry(key='policy/b', value=None, version=(2, 0)))
    ctx = TxContext(state, proposal_for_context())
    assert ctx.get_state_by_prefix('policy/') == [('policy/a', b'1')]
    assert ctx.get_state('policy/b') is None
    read_set, _ = ctx.close()
    assert [(r.key, r.version) for r in read_set] == [('policy/a', (1, 0)), ('policy/b', (2, 0))]


def live_values(state):
    return {entry.key: entry.value for entry in state.scan('')}


def conflicting_round(rng, peer, admin, make_policy, pool):
    proposals = []
    for device in rng.sample(pool, 3):
        template = make_policy(device=device)
        key = abac.policy_key(template)
        for _ in range(2):
            bits = {'read': rng.randint(0, 1), 'write': rng.randint(0, 1)}
            if peer.get_state(key) is None:
                proposals.append(new_proposal(admin, ContractName.policy, 'AddPolicy', [make_policy(device=device,
                                                                                                   **bits)]))
            elif rng.random() < 0.3:
                proposals.append(new_proposal(admin, ContractName.policy, 'DeletePolicy', [key]))
            else:
                proposals.append(new_proposal(admin, ContractName.policy, 'UpdatePolicy',
                                              [key, make_policy(device=device, **bits)]))
    rng.shuffle(proposals)
    return proposals


def test_randomized_conflicting_pairs_match_serial_execution(network, members, make_policy):
    rng = random.Random(2024)
    gateway = network.edge('domA').gateway
    replica = network.sequencer.replica
    source = network.edge('domB').peer
    serial = Peer(source.identity, network.msp, network.contracts, network.policy)
    pool = [f'm{i}' for i in range(6)]
    applied = replica.height
    codes = []
    for workload in range(100):
        results = gateway.submit_sync(conflicting_round(rng, source, members['admin_a'], make_policy, pool))
        codes += [r.code for r in results]
        for block in replica.blocks_from(applied):
            for index, tx in enumerate(block.txs):
                if block.validity[index]:
                    simulation = serial.simulate(tx.proposal())
                    assert simulation.write_set == tx.write_set
                    serial.state.apply(simulation.write_set, (block.height, index))
        applied = replica.height
        assert live_values(serial.state) == live_values(source.state), f'workload {workload} diverged'
    assert TxValidationCode.mvcc_read_conflict in codes
    assert TxValidationCode.valid in codes
    assert source.replay() == source.state


def check_access_proposal(identity, clock):
    body = access_body(ObjectRef(device_id='d1', domain_id='domA'), Operation.read, '10.0.0.5')
    return new_proposal(identity, ContractName.access, 'CheckAccess', [body], clock=clock)


def test_endorsers_refuse_backdated_proposals(network, members, make_policy, now, clock):
    gateway = network.edge('domA').gateway
    gateway.submit_sync([add_policy(members['admin_a'], make_policy(start=now - 100, end=now + 100))])
    clock.offset = 200
    backdated = check_access_proposal(members['alice'], lambda: now)
    with pytest.raises(ClockSkew):
        gateway.endorse(backdated)
    with pytest.raises(ClockSkew):
        network.edge('domB').peer.simulate(backdated)
    with pytest.raises(ClockSkew):
        gateway.endorse(check_access_proposal(members['alice'], lambda: now + 400))


def test_proposals_within_skew_are_endorsed(network, members, make_policy, clock):
    gateway = network.edge('domA').gateway
    gateway.submit_sync([add_policy(members['admin_a'], make_policy())])
    slightly_off = check_access_proposal(members['alice'], lambda: clock() - settings.max_clock_skew_s + 2)
    (result,) = gateway.submit_sync([slightly_off])
    assert result.code == TxValidationCode.valid
    assert result.payload['verdict'] == 'Approve'


def test_commit_invalidates_transactions_far_from_block_time(network, members, make_policy, clock, provisioned):
    gateway = network.edge('domA').gateway
    tx = gateway.endorse(add_policy(members['admin_a'], make_policy()))
    clock.offset = 3 * settings.max_clock_skew_s
    network.sequencer.order([tx])
    block = network.sequencer.replica.blocks()[-1]
    assert block.timestamp - tx.timestamp > settings.max_clock_skew_s
    assert block.validity == (False,)
    for peer in all_peers(network):
        assert peer.tx_code(tx.tx_id) == TxValidationCode.timestamp_out_of_range
        assert peer.get_state(abac.policy_key(make_policy())) is None
    asyncio.run(network.stop())
    restarted = Network.load(provisioned[0] / 'network.json')
    assert restarted.sequencer.replica.tx_code(tx.tx_id) == TxValidationCode.timestamp_out_of_range
    assert restarted.sequencer.replica.head_hash == network.sequencer.replica.head_hash


def test_block_time_is_covered_by_the_hash(network, members, make_policy):
    seeded(network, members, make_policy, 2)
    blocks = network.sequencer.replica.blocks()
    moved = blocks[-1].copy(update={'timestamp': blocks[-1].timestamp + 1})
    assert verify_blocks(blocks[:-1] + [moved]) == len(blocks) - 1
