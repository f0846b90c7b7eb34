"""
Network provisioning and runtime: artifacts generated from a topology, and the in-process
network of sequencer plus one edge per domain.
"""
from __future__ import annotations

import logging
import time
from collections.abc import Callable
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from src.database.db import make_session_factory
from src.exceptions import ConfigError, NetworkError, TransportError, UnknownDomain
from src.repository.archive import BlockArchive
from src.repository.ddss import DdssStore
from src.schemas import (CaConfig, DomainConfig, EndorsementPolicy, Identity, MessageType, NetworkConfig, RoleClass,
                         SubjectAttributes, Topology, WireMessage)
from src.services import canonical
from src.services.contracts import ContractRegistry
from src.services.edge import EdgeNode
from src.services.gateway import Gateway
from src.services.identity import (CertificateAuthority, MembershipService, load_identity, save_identity,
                                   write_private)
from src.services.ledger import Peer, genesis_block
from src.services.ordering import OrderingService, Sequencer
from src.services.transport import LoopbackTransport, MessageServer, TcpTransport, Transport, expect

logger = logging.getLogger(__name__)

CONFIG_NAME = 'network.json'
PID_NAME = 'net.pid'


def ca_id_for(org_id: str) -> str:
    return f'ca.{org_id}'


def admin_identity_path(network_dir: Path, org_id: str) -> Path:
    return network_dir / 'identities' / org_id / 'admin.json'


def network_dir_of(config: NetworkConfig) -> Path:
    return config.orderer_archive_path.parent.parent


def load_config(path: Path) -> NetworkConfig:
    try:
        return NetworkConfig.parse_file(path)
    except (OSError, ValidationError, ValueError) as err:
        raise ConfigError(f'cannot read network config {path}: {err}')


def load_topology(path: Path) -> Topology:
    try:
        return Topology.parse_file(path)
    except (OSError, ValidationError, ValueError) as err:
        raise ConfigError(f'cannot read topology {path}: {err}')


def init_network(topology: Topology, network_dir: Path, **ca_options) -> tuple[NetworkConfig, dict[str, str]]:
    """
    The init_network function generates every artifact of a network: one CA per peer organization
    plus one for the orderer organization, peer and orderer identities, empty ledgers holding the
    genesis block, and the network document.

    :param topology: Topology: Domains with their organizations and endpoints
    :param network_dir: Path: Directory receiving the artifacts
    :param ca_options: Extra CertificateAuthority options (e.g. bcrypt_rounds)
    :return: The network config and the registrar bootstrap secret of each CA
    """
    network_dir = Path(network_dir)
    config_path = network_dir / CONFIG_NAME
    if config_path.exists():
        raise ConfigError(f'{config_path} already exists')
    orgs = [d.org_id for d in topology.domains]
    if len(set(orgs)) != len(orgs) or topology.orderer_org in orgs:
        raise ConfigError('every domain needs its own organization, distinct from the orderer organization')
    network_dir.mkdir(parents=True, exist_ok=True)
    registry_url = f'sqlite:///{(network_dir / "registry.db").resolve()}'
    session_factory = make_session_factory(registry_url)
    bootstrap_secrets: dict[str, str] = {}
    cas = []
    registrars: dict[str, tuple[CertificateAuthority, Identity]] = {}
    for org_id in orgs + [topology.orderer_org]:
        ca_config = CaConfig(ca_id=ca_id_for(org_id), org_id=org_id,
                             key_path=network_dir / 'cas' / f'{ca_id_for(org_id)}.pem')
        ca, secret = CertificateAuthority.bootstrap(ca_config.ca_id, org_id, session_factory,
                                                    registrar_id=ca_config.registrar_id,
                                                    key_path=ca_config.key_path, **ca_options)
        admin = ca.enroll_admin(ca_config.registrar_id, secret)
        save_identity(admin, admin_identity_path(network_dir, org_id))
        bootstrap_secrets[ca_config.ca_id] = secret
        registrars[org_id] = (ca, admin)
        cas.append(ca_config)

    def provision(org_id: str, subject_id: str, role_class: RoleClass, domain_id: str) -> Path:
        ca, admin = registrars[org_id]
        secret = ca.register(admin.certificate, subject_id, role_class,
                             SubjectAttributes(user_id=subject_id, role=role_class.value.lower(), domain_id=domain_id))
        path = network_dir / 'identities' / org_id / f'{subject_id}.json'
        save_identity(ca.enroll(subject_id, secret), path)
        return path

    genesis = genesis_block()
    domains = []
    for d in topology.domains:
        peer_id = f'peer0.{d.org_id}'
        archive_path = network_dir / 'ledgers' / f'{peer_id}.blocks'
        BlockArchive(archive_path).append(genesis)
        domains.append(DomainConfig(
            domain_id=d.domain_id, org_id=d.org_id, peer_id=peer_id, endpoint=d.endpoint,
            peers={o.domain_id: o.endpoint for o in topology.domains if o.domain_id != d.domain_id},
            ddss_root=network_dir / 'ddss' / d.domain_id, archive_path=archive_path,
            identity_path=provision(d.org_id, peer_id, RoleClass.peer, d.domain_id)))
    orderer_id = 'orderer0'
    orderer_archive = network_dir / 'ledgers' / f'{orderer_id}.blocks'
    BlockArchive(orderer_archive).append(genesis)
    config = NetworkConfig(
        channel=topology.channel, registry_database_url=registry_url, orderer_org=topology.orderer_org,
        orderer_id=orderer_id, orderer_archive_path=orderer_archive,
        orderer_identity_path=provision(topology.orderer_org, orderer_id, RoleClass.orderer, topology.orderer_org),
        cas=tuple(cas), domains=tuple(domains))
    write_private(config_path, canonical.dumps_str(config))
    logger.info('network initialized in %s: %d domains, %d CAs', network_dir, len(domains), len(cas))
    return config, bootstrap_secrets


class Network:
    """Sequencer and every domain edge of one network, running in one process."""

    def __init__(self, config: NetworkConfig, transport: Optional[Transport] = None,
                 clock: Callable[[], float] = time.time):
        self.config = config
        self.transport = transport or LoopbackTransport()
        self.session_factory = make_session_factory(config.registry_database_url)
        self.msp = MembershipService.from_registry(self.session_factory)
        self.contracts = ContractRegistry(self.msp)
        self.policy = EndorsementPolicy(required_peers=tuple(d.peer_id for d in config.domains))
        replica = Peer(load_identity(config.orderer_identity_path), self.msp, self.contracts, self.policy,
                       BlockArchive(config.orderer_archive_path), clock=clock)
        self.sequencer = Sequencer(replica, clock=clock)
        self.ordering = OrderingService(self.sequencer)
        peers = {d.peer_id: Peer(load_identity(d.identity_path), self.msp, self.contracts, self.policy,
                                 BlockArchive(d.archive_path), clock=clock) for d in config.domains}
        directory = {d.domain_id: d.endpoint for d in config.domains}
        self.edges: dict[str, EdgeNode] = {}
        for d in config.domains:
            peer = peers[d.peer_id]
            self.sequencer.attach(peer)
            self.edges[d.domain_id] = EdgeNode(d, peer, Gateway(peers, self.policy, self.ordering),
                                               DdssStore(d.ddss_root), peer.identity, self.transport, directory,
                                               clock=clock)
        self._servers: list[MessageServer] = []

    @classmethod
    def load(cls, path: Path, **kwargs) -> 'Network':
        return cls(load_config(path), **kwargs)

    def edge(self, domain_id: str) -> EdgeNode:
        edge = self.edges.get(domain_id)
        if edge is None:
            raise UnknownDomain(f'no edge for domain {domain_id}')
        return edge

    def authority(self, org_id: str) -> CertificateAuthority:
        ca_config = self.config.ca_for_org(org_id)
        if ca_config is None:
            raise ConfigError(f'no CA for organization {org_id}')
        return CertificateAuthority.load(ca_config, self.session_factory)

    def enroll_member(self, registrar: Identity, org_id: str, subject_id: str, role_class: RoleClass,
                      attributes: SubjectAttributes) -> Identity:
        """
        The enroll_member function registers an identity with the CA of an organization and enrolls it.

        :param registrar: Identity: GlobalAdmin of that CA
        :param org_id: str: Organization of the new identity
        :param subject_id: str: New id
        :param role_class: RoleClass: Role class of the new identity
        :param attributes: SubjectAttributes: Attributes embedded in its certificate
        :return: The enrolled identity
        """
        ca = self.authority(org_id)
        secret = ca.register(registrar.certificate, subject_id, role_class, attributes)
        return ca.enroll(subject_id, secret)

    async def start(self) -> None:
        """
        The start function makes every edge reachable through the transport.
        TCP transports get one listening server per edge.

        :return: None
        """
        if isinstance(self.transport, LoopbackTransport):
            for edge in self.edges.values():
                self.transport.register(edge.config.endpoint, edge.handle)
            return
        try:
            for edge in self.edges.values():
                server = MessageServer(edge.config.host, edge.config.port, edge.handle)
                await server.start()
                self._servers.append(server)
        except NetworkError:
            await self.stop()
            raise

    async def stop(self) -> None:
        self.ordering.flush()
        for server in self._servers:
            await server.stop()
        self._servers.clear()
        if isinstance(self.transport, LoopbackTransport):
            for edge in self.edges.values():
                self.transport.unregister(edge.config.endpoint)
        logger.info('network stopped at height %d', self.sequencer.height)

    async def health_check(self) -> dict[str, dict]:
        """
        The health_check function pings every edge through the transport and checks that
        all of them agree with the sequencer on the chain head.

        :return: Status of every edge by domain
        """
        statuses = {}
        for domain_id, edge in sorted(self.edges.items()):
            try:
                reply = await self.transport.request(edge.config.endpoint, WireMessage(type=MessageType.ping))
                statuses[domain_id] = expect(reply, MessageType.pong)
            except TransportError as err:
                raise NetworkError(f'edge {domain_id} is unreachable: {err.message}')
        heads = {s['head_hash'] for s in statuses.values()} | {self.sequencer.replica.head_hash}
        if len(heads) != 1:
            raise NetworkError('edges disagree on the chain head')
        return statuses


async def ping_all(config: NetworkConfig, transport: Optional[Transport] = None) -> dict[str, dict]:
    transport = transport or TcpTransport()
    statuses = {}
    for d in config.domains:
        try:
            statuses[d.domain_id] = expect(await transport.request(d.endpoint, WireMessage(type=MessageType.ping)),
                                           MessageType.pong)
        except TransportError as err:
            statuses[d.domain_id] = {'error': err.message}
    return statuses
