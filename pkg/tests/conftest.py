import asyncio
import time

import pytest

from src.conf.config import settings
from src.schemas import DomainTopology, Policy, RoleClass, SubjectAttributes, Topology
from src.services.identity import load_identity
from src.services.network import Network, admin_identity_path, init_network

settings.bcrypt_rounds = 4


class ShiftedClock:
    """Wall clock moved by a settable offset; every component of a test network reads it."""

    def __init__(self):
        self.offset = 0

    def __call__(self):
        return time.time() + self.offset


@pytest.fixture
def topology():
    return Topology(domains=[
        DomainTopology(domain_id='domA', org_id='org1', endpoint='127.0.0.1:17051'),
        DomainTopology(domain_id='domB', org_id='org2', endpoint='127.0.0.1:18051'),
    ])


@pytest.fixture
def provisioned(tmp_path, topology):
    network_dir = tmp_path / 'network'
    config, secrets = init_network(topology, network_dir)
    return network_dir, config, secrets


@pytest.fixture
def clock():
    return ShiftedClock()


@pytest.fixture
def network(provisioned, clock):
    _, config, _ = provisioned
    net = Network(config, clock=clock)
    asyncio.run(net.start())
    yield net
    asyncio.run(net.stop())


@pytest.fixture
def members(network, provisioned):
    network_dir = provisioned[0]
    registrars = {org: load_identity(admin_identity_path(network_dir, org)) for org in ('org1', 'org2')}

    def enroll(org, subject_id, role_class, role, domain_id):
        return network.enroll_member(registrars[org], org, subject_id, role_class,
                                     SubjectAttributes(user_id=subject_id, role=role, domain_id=domain_id))

    return {
        'admin_a': enroll('org1', 'admin_a', RoleClass.local_admin, 'admin', 'domA'),
        'admin_b': enroll('org2', 'admin_b', RoleClass.local_admin, 'admin', 'domB'),
        'alice': enroll('org1', 'alice', RoleClass.user, 'doctor', 'domA'),
        'carol': enroll('org1', 'carol', RoleClass.user, 'nurse', 'domA'),
        'bob': enroll('org2', 'bob', RoleClass.user, 'doctor', 'domB'),
    }


@pytest.fixture
def now():
    return int(time.time())


@pytest.fixture
def make_policy():
    def factory(user='alice', role='doctor', user_domain='domA', device='d1', domain='domA', owners=('alice',),
                read=1, write=1, allowed_ip='10.0.0.0/8', start=None, end=None, data_type='temperature'):
        now = int(time.time())
        start = now - 3600 if start is None else start
        end = now + 3600 if end is None else end
        return Policy.parse_obj({
            'sa': {'user_id': user, 'role': role, 'domain_id': user_domain},
            'oa': {'device_id': device, 'domain_id': domain, 'owner_ids': list(owners), 'data_type': data_type},
            'pa': {'read': read, 'write': write},
            'ea': {'allowed_ip': allowed_ip, 'start_time': start, 'end_time': end},
        })

    return factory
