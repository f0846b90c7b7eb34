import json
import stat

import pytest

from main import main
from src.services import canonical
from src.services.identity import save_identity
from src.services.network import admin_identity_path


def last_line(text):
    return text.strip().splitlines()[-1]


@pytest.fixture
def cli(network, provisioned):
    config = str(provisioned[0] / 'network.json')

    def run(*argv, identity=None, output='human'):
        args = ['--config', config, '--output', output, '--log-level', 'WARNING']
        if identity is not None:
            args += ['--identity', str(identity)]
        return main(args + list(argv), transport=network.transport)

    return run


@pytest.fixture
def identity_files(members, tmp_path):
    files = {}
    for name, identity in members.items():
        files[name] = tmp_path / 'ids' / f'{name}.json'
        save_identity(identity, files[name])
    return files


@pytest.fixture
def policy_file(make_policy, tmp_path):
    def write(**kwargs):
        path = tmp_path / 'policy.json'
        path.write_text(canonical.dumps_str(make_policy(**kwargs)), encoding='utf-8')
        return str(path)

    return write


def test_policy_add_prints_key(cli, identity_files, policy_file, capsys):
    assert cli('policy', 'add', '-f', policy_file(), identity=identity_files['admin_a']) == 0
    assert capsys.readouterr().out.strip() == 'policy/domA/d1/alice'


def test_policy_query_json_envelope(cli, identity_files, policy_file, capsys):
    cli('policy', 'add', '-f', policy_file(), identity=identity_files['admin_a'])
    capsys.readouterr()
    assert cli('policy', 'query', '--device', 'd1', '--domain', 'domA', identity=identity_files['alice'],
               output='json') == 0
    envelope = json.loads(capsys.readouterr().out)
    assert envelope['status'] == 'ok'
    assert [e['key'] for e in envelope['payload']] == ['policy/domA/d1/alice']


def test_policy_query_needs_selector(cli, identity_files):
    assert cli('policy', 'query', '--device', 'd1', identity=identity_files['alice']) == 2


def test_policy_validate(cli, identity_files, tmp_path, capsys):
    path = tmp_path / 'broken.json'
    path.write_text(json.dumps({'sa': {'user_id': 'alice', 'role': 'doctor', 'domain_id': 'domA'}}), encoding='utf-8')
    assert cli('policy', 'validate', '-f', str(path), identity=identity_files['alice']) == 0
    out = capsys.readouterr().out
    assert out.startswith('invalid:')
    assert 'missing OA' in out


def test_policy_add_invalid_document(cli, identity_files, tmp_path, capsys):
    path = tmp_path / 'broken.json'
    path.write_text('{"sa": {}}', encoding='utf-8')
    assert cli('policy', 'add', '-f', str(path), identity=identity_files['admin_a']) == 4
    assert last_line(capsys.readouterr().err).startswith('InvalidPolicy:')


def test_access_check_approve_and_reject(cli, identity_files, policy_file, capsys):
    cli('policy', 'add', '-f', policy_file(), identity=identity_files['admin_a'])
    capsys.readouterr()
    assert cli('access', 'check', '--device', 'd1', '--domain', 'domA', '--client-ip', '10.0.0.5',
               identity=identity_files['alice']) == 0
    assert capsys.readouterr().out.strip() == 'approve'
    assert cli('access', 'check', '--device', 'd2', '--domain', 'domA', '--client-ip', '10.0.0.5',
               identity=identity_files['alice']) == 3
    assert last_line(capsys.readouterr().err) == 'reject: NoPolicy'


def test_reject_json_envelope(cli, identity_files, capsys):
    assert cli('access', 'check', '--device', 'd2', '--domain', 'domA', identity=identity_files['alice'],
               output='json') == 3
    envelope = json.loads(capsys.readouterr().out)
    assert envelope == {'status': 'error', 'error': {'code': 'AccessRejected', 'message': 'reject: NoPolicy'}}


def test_delegate_and_revoke(cli, identity_files, policy_file, capsys):
    cli('policy', 'add', '-f', policy_file(), identity=identity_files['admin_a'])
    key = 'policy/domA/d1/alice'
    assert cli('access', 'delegate', '--key', key, '--user', 'carol', identity=identity_files['alice']) == 0
    assert cli('access', 'check', '--device', 'd1', '--domain', 'domA', '--client-ip', '10.0.0.5',
               identity=identity_files['carol']) == 0
    assert cli('access', 'revoke', '--key', key, '--op', 'read', identity=identity_files['alice']) == 0
    capsys.readouterr()
    assert cli('access', 'check', '--device', 'd1', '--domain', 'domA', '--client-ip', '10.0.0.5',
               identity=identity_files['carol']) == 3
    assert last_line(capsys.readouterr().err) == 'reject: PermissionDenied'
    assert cli('access', 'delegate', '--key', key, '--user', 'carol', identity=identity_files['bob']) == 4


def test_access_attributes(cli, identity_files, capsys):
    assert cli('access', 'attributes', '--device', 'd1', '--domain', 'domA', identity=identity_files['bob'],
               output='json') == 0
    payload = json.loads(capsys.readouterr().out)['payload']
    assert payload['subject'] == {'user_id': 'bob', 'role': 'doctor', 'domain_id': 'domB'}
    assert payload['client_ip'] == '127.0.0.1'


def test_missing_identity(cli, capsys):
    assert cli('policy', 'delete', '--key', 'policy/domA/d1/alice') == 4
    assert last_line(capsys.readouterr().err).startswith('Unauthorized:')


def test_bad_config(tmp_path, capsys):
    assert main(['--config', str(tmp_path / 'missing.json'), 'ledger', 'verify']) == 2
    assert last_line(capsys.readouterr().err).startswith('ConfigError:')


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        main(['policy'])
    assert info.value.code == 2


def test_identity_workflow(cli, provisioned, tmp_path, capsys):
    registrar = admin_identity_path(provisioned[0], 'org1')
    assert cli('identity', 'register', '--org', 'org1', '--id', 'dave', '--role-class', 'User', '--role', 'doctor',
               '--domain', 'domA', identity=registrar, output='json') == 0
    secret = json.loads(capsys.readouterr().out)['payload']['secret']
    out = tmp_path / 'dave.json'
    assert cli('identity', 'enroll', '--org', 'org1', '--id', 'dave', '--secret', secret, '--out', str(out)) == 0
    assert stat.S_IMODE(out.stat().st_mode) == 0o600
    assert secret not in capsys.readouterr().out
    assert cli('access', 'check', '--device', 'd1', '--domain', 'domA', identity=out) == 3


def test_enroll_with_wrong_secret(cli, tmp_path, capsys):
    assert cli('identity', 'enroll-admin', '--org', 'org1', '--secret', 'wrong', '--out',
               str(tmp_path / 'admin.json')) == 4
    assert last_line(capsys.readouterr().err).startswith('BadSecret:')
    assert not (tmp_path / 'admin.json').exists()


def test_register_needs_registrar(cli, identity_files):
    assert cli('identity', 'register', '--org', 'org1', '--id', 'eve', '--role-class', 'GlobalAdmin', '--role',
               'admin', '--domain', 'domA', identity=identity_files['alice']) == 4


def test_data_ingest_and_get(cli, identity_files, policy_file, tmp_path, capsys):
    reading = tmp_path / 'reading.bin'
    reading.write_bytes(b'21.5')
    assert cli('data', 'ingest', '--device', 'd1', '--domain', 'domA', '--type', 'temperature', '--file',
               str(reading)) == 0
    assert capsys.readouterr().out.strip() == canonical.sha256_hex(b'21.5')
    cli('policy', 'add', '-f', policy_file(user='bob', user_domain='domB'), identity=identity_files['admin_a'])
    out = tmp_path / 'fetched.bin'
    assert cli('data', 'get', '--device', 'd1', '--domain', 'domA', '--client-ip', '10.0.0.5', '--out', str(out),
               identity=identity_files['bob']) == 0
    assert out.read_bytes() == b'21.5'


def test_ledger_verify_and_tamper(cli, identity_files, policy_file, network, capsys):
    cli('policy', 'add', '-f', policy_file(), identity=identity_files['admin_a'])
    capsys.readouterr()
    assert cli('ledger', 'verify') == 0
    assert capsys.readouterr().out.strip() == f'chain intact, height {network.sequencer.height}'
    assert cli('ledger', 'info', '--peer', 'orderer0', output='json') == 0
    assert json.loads(capsys.readouterr().out)['payload']['head_hash'] == network.sequencer.replica.head_hash
    archive = network.config.domains[0].archive_path
    data = bytearray(archive.read_bytes())
    data[-5] ^= 0x01
    archive.write_bytes(bytes(data))
    assert cli('ledger', 'verify') == 4
    assert last_line(capsys.readouterr().err).startswith('BrokenChain:')
    assert cli('ledger', 'verify', '--peer', 'peer0.org2') == 0
    assert cli('ledger', 'verify', '--peer', 'peer9.org9') == 2


def test_ledger_export(cli, tmp_path, network):
    out = tmp_path / 'chain.json'
    assert cli('ledger', 'export', '--out', str(out)) == 0
    blocks = json.loads(out.read_text(encoding='utf-8'))
    assert len(blocks) == network.sequencer.height
    assert blocks[0]['height'] == 0


def test_net_status(cli, capsys):
    assert cli('net', 'status', output='json') == 0
    payload = json.loads(capsys.readouterr().out)['payload']
    assert set(payload) == {'domA', 'domB'}
    assert payload['domA']['height'] == payload['domB']['height']


def test_net_stop_without_running_network(cli, capsys):
    assert cli('net', 'stop') == 5
    assert last_line(capsys.readouterr().err).startswith('NetworkError:')


def test_net_init_twice(topology, tmp_path, capsys):
    topology_file = tmp_path / 'topology.json'
    topology_file.write_text(canonical.dumps_str(topology), encoding='utf-8')
    network_dir = tmp_path / 'fresh'
    assert main(['net', 'init', '--topology', str(topology_file), '--dir', str(network_dir)]) == 0
    out = capsys.readouterr().out
    assert 'ca.org1' in out
    assert (network_dir / 'network.json').exists()
    assert main(['net', 'init', '--topology', str(topology_file), '--dir', str(network_dir)]) == 2


def test_bench_run(topology, tmp_path, capsys):
    topology_file = tmp_path / 'topology.json'
    topology_file.write_text(canonical.dumps_str(topology), encoding='utf-8')
    out = tmp_path / 'report.json'
    assert main(['bench', 'run', '--topology', str(topology_file), '--function', 'QueryPolicy', '--rate', '100',
                 '--total', '3', '--warmup', '0', '--out', str(out)]) == 0
    assert capsys.readouterr().out.startswith('QueryPolicy @ 100 TPS: 3/3 ok')
    assert json.loads(out.read_text(encoding='utf-8'))['scenario']['total_tx'] == 3


def test_bench_run_rejects_empty_scenario(topology, tmp_path):
    topology_file = tmp_path / 'topology.json'
    topology_file.write_text(canonical.dumps_str(topology), encoding='utf-8')
    assert main(['bench', 'run', '--topology', str(topology_file), '--function', 'AddPolicy', '--rate', '5',
                 '--total', '0']) == 2
