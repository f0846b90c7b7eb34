"""
Certificate authorities, the membership service and certificate verification.

Certificates are signed canonical documents that embed the subject attributes
(user id, role, domain) used by the access contract.
"""
from __future__ import annotations

import logging
import os
import secrets
import threading
import time
from collections.abc import Callable, Iterable, Mapping
from pathlib import Path
from typing import NamedTuple

from passlib.context import CryptContext
from sqlalchemy.orm import sessionmaker

from src.conf.config import settings
from src.database.db import get_db
from src.exceptions import AlreadyRegistered, BadCertificate, BadSecret, ConfigError, Unauthorized, UnknownId
from src.repository import registry as repository_registry
from src.schemas import CaConfig, CertificateCheck, Identity, IdentityCertificate, RoleClass, SubjectAttributes
from src.services import canonical, crypto

logger = logging.getLogger(__name__)

GLOBAL_DOMAIN = 'global'


class TrustAnchor(NamedTuple):
    org_id: str
    public_key: str


def write_private(path: Path, data: str) -> None:
    """
    The write_private function writes key material or identity files readable by the owner only.

    :param path: Path: Destination file
    :param data: str: File contents
    :return: None
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, 'w', encoding='utf-8') as fh:
        fh.write(data)
    os.chmod(path, 0o600)


def save_identity(identity: Identity, path: Path) -> None:
    write_private(path, canonical.dumps_str(identity))


def load_identity(path: Path) -> Identity:
    try:
        return Identity.parse_file(path)
    except (OSError, ValueError) as err:
        raise ConfigError(f'cannot read identity file {path}: {err}')


def verify(cert: IdentityCertificate, trusted: Mapping[str, TrustAnchor]) -> CertificateCheck:
    """
    The verify function checks a certificate against a set of trusted CAs.
    Failures are returned as values.

    :param cert: IdentityCertificate: Certificate to check
    :param trusted: Mapping[str, TrustAnchor]: Trusted CAs by ca_id
    :return: CertificateCheck with the failure reason when not ok
    """
    anchor = trusted.get(cert.ca_id)
    if anchor is None or anchor.org_id != cert.org_id:
        return CertificateCheck(ok=False, reason='untrusted issuer')
    if not crypto.verify(canonical.dumps(cert.unsigned()), cert.signature, anchor.public_key):
        return CertificateCheck(ok=False, reason='bad signature')
    if cert.role_class == RoleClass.local_admin and not cert.attributes.domain_id:
        return CertificateCheck(ok=False, reason='local admin without domain')
    return CertificateCheck(ok=True)


class CertificateAuthority:
    """One CA per organization, issuing attribute-bearing certificates."""

    def __init__(self, ca_id: str, org_id: str, private_key: str, public_key: str, session_factory: sessionmaker,
                 bcrypt_rounds: int | None = None, clock: Callable[[], float] = time.time):
        self.ca_id = ca_id
        self.org_id = org_id
        self.public_key = public_key
        self._private_key = private_key
        self._session_factory = session_factory
        self._clock = clock
        self._lock = threading.Lock()
        self.pwd_context = CryptContext(schemes=["bcrypt"], deprecated="auto",
                                        bcrypt__rounds=bcrypt_rounds or settings.bcrypt_rounds)

    @property
    def anchor(self) -> TrustAnchor:
        return TrustAnchor(self.org_id, self.public_key)

    @classmethod
    def bootstrap(cls, ca_id: str, org_id: str, session_factory: sessionmaker, registrar_id: str = 'admin',
                  key_path: Path | None = None, **kwargs) -> tuple['CertificateAuthority', str]:
        """
        The bootstrap function creates a CA with its signing key and its single registrar credential.

        :param ca_id: str: CA identifier
        :param org_id: str: Organization served by the CA
        :param session_factory: sessionmaker: Registry sessions
        :param registrar_id: str: Id of the global admin (registrar)
        :param key_path: Path | None: Where to persist the CA key, if anywhere
        :return: The CA and the registrar's bootstrap secret (shown once)
        """
        private_key, public_key = crypto.generate_keypair()
        ca = cls(ca_id, org_id, private_key, public_key, session_factory, **kwargs)
        secret = secrets.token_urlsafe(24)
        with get_db(session_factory) as db:
            if repository_registry.get_authority(db, ca_id) is not None:
                raise ConfigError(f'CA {ca_id} already exists')
            repository_registry.create_authority(db, ca_id, org_id, public_key)
            repository_registry.create_registration(
                db, ca_id, registrar_id, ca.pwd_context.hash(secret), RoleClass.global_admin,
                SubjectAttributes(user_id=registrar_id, role='admin', domain_id=GLOBAL_DOMAIN))
        if key_path is not None:
            write_private(key_path, private_key)
        logger.info('CA %s bootstrapped for %s', ca_id, org_id)
        return ca, secret

    @classmethod
    def load(cls, config: CaConfig, session_factory: sessionmaker, **kwargs) -> 'CertificateAuthority':
        with get_db(session_factory) as db:
            authority = repository_registry.get_authority(db, config.ca_id)
        if authority is None:
            raise ConfigError(f'CA {config.ca_id} is not initialized')
        try:
            private_key = config.key_path.read_text(encoding='utf-8')
        except OSError as err:
            raise ConfigError(f'cannot read key of CA {config.ca_id}: {err}')
        return cls(config.ca_id, authority.org_id, private_key, authority.public_key, session_factory, **kwargs)

    def enroll_admin(self, admin_id: str, secret: str) -> Identity:
        """
        The enroll_admin function enrolls the registrar and returns its GlobalAdmin identity.
        Enrolling again yields the same subject with a fresh key pair.

        :param admin_id: str: Registrar id
        :param secret: str: Bootstrap secret
        :return: The GlobalAdmin identity
        """
        with get_db(self._session_factory) as db:
            registration = repository_registry.get_registration(db, self.ca_id, admin_id)
            if registration is not None and registration.role_class != RoleClass.global_admin.value:
                raise Unauthorized(f'{admin_id} is not a registrar')
        return self.enroll(admin_id, secret)

    def register(self, registrar: IdentityCertificate, new_id: str, role_class: RoleClass,
                 attributes: SubjectAttributes) -> str:
        """
        The register function adds an identity to the registry on behalf of a global admin.

        :param registrar: IdentityCertificate: Certificate of the caller, must be GlobalAdmin of this CA
        :param new_id: str: Id to register
        :param role_class: RoleClass: Role class of the new identity
        :param attributes: SubjectAttributes: Attributes embedded at enrollment
        :return: The enrollment secret (returned once, only its hash is stored)
        """
        check = verify(registrar, {self.ca_id: self.anchor})
        if not check.ok or registrar.role_class != RoleClass.global_admin:
            raise Unauthorized('only a global admin of this CA may register identities')
        secret = secrets.token_urlsafe(24)
        with self._lock, get_db(self._session_factory) as db:
            if repository_registry.get_registration(db, self.ca_id, new_id) is not None:
                raise AlreadyRegistered(f'{new_id} is already registered at {self.ca_id}')
            repository_registry.create_registration(db, self.ca_id, new_id, self.pwd_context.hash(secret),
                                                    role_class, attributes)
        logger.info('%s registered %s as %s', registrar.subject_id, new_id, role_class.value)
        return secret

    def enroll(self, subject_id: str, secret: str) -> Identity:
        """
        The enroll function exchanges an enrollment secret for a certificate and signing key.

        :param subject_id: str: Registered id
        :param secret: str: Enrollment secret
        :return: The enrolled identity
        """
        with self._lock, get_db(self._session_factory) as db:
            registration = repository_registry.get_registration(db, self.ca_id, subject_id)
            if registration is None:
                raise UnknownId(f'{subject_id} is not registered at {self.ca_id}')
            if not self.pwd_context.verify(secret, registration.secret_hash):
                raise BadSecret(f'wrong secret for {subject_id}')
            private_key, public_key = crypto.generate_keypair()
            cert = IdentityCertificate(
                subject_id=subject_id,
                role_class=RoleClass(registration.role_class),
                attributes=SubjectAttributes(user_id=registration.user_id, role=registration.role,
                                             domain_id=registration.domain_id),
                org_id=self.org_id,
                ca_id=self.ca_id,
                serial=(registration.enrollment_count or 0) + 1,
                issued_at=int(self._clock()),
                public_key=public_key,
            )
            repository_registry.mark_enrolled(db, registration)
        cert = cert.copy(update={'signature': crypto.sign(canonical.dumps(cert.unsigned()), self._private_key)})
        logger.info('%s enrolled %s (serial %d)', self.ca_id, subject_id, cert.serial)
        return Identity(certificate=cert, private_key=private_key)


class MembershipService:
    """Trusted CAs of the network plus enrollment lookups, shared by every peer."""

    def __init__(self, anchors: Mapping[str, TrustAnchor], session_factory: sessionmaker | None = None):
        self._anchors = dict(anchors)
        self._session_factory = session_factory
        self._verified: dict[str, bool] = {}

    @classmethod
    def from_authorities(cls, authorities: Iterable[CertificateAuthority],
                         session_factory: sessionmaker | None = None) -> 'MembershipService':
        return cls({ca.ca_id: ca.anchor for ca in authorities}, session_factory)

    @classmethod
    def from_registry(cls, session_factory: sessionmaker) -> 'MembershipService':
        with get_db(session_factory) as db:
            anchors = {a.ca_id: TrustAnchor(a.org_id, a.public_key)
                       for a in repository_registry.list_authorities(db)}
        return cls(anchors, session_factory)

    @property
    def msp_ids(self) -> list[str]:
        return sorted(f'{anchor.org_id}MSP' for anchor in self._anchors.values())

    def verify(self, cert: IdentityCertificate) -> CertificateCheck:
        fingerprint = canonical.digest(cert)
        if self._verified.get(fingerprint):
            return CertificateCheck(ok=True)
        check = verify(cert, self._anchors)
        if check.ok:
            self._verified[fingerprint] = True
        return check

    def require(self, cert: IdentityCertificate, *role_classes: RoleClass) -> IdentityCertificate:
        """
        The require function verifies a certificate and optionally its role class.

        :param cert: IdentityCertificate: Certificate to check
        :param role_classes: RoleClass: Accepted role classes, any when empty
        :return: The certificate
        """
        check = self.verify(cert)
        if not check.ok:
            raise BadCertificate(f'certificate of {cert.subject_id}: {check.reason}')
        if role_classes and cert.role_class not in role_classes:
            raise BadCertificate(f'{cert.subject_id} is not {"/".join(r.value for r in role_classes)}')
        return cert

    def is_enrolled(self, user_id: str) -> bool:
        if self._session_factory is None:
            return False
        with get_db(self._session_factory) as db:
            return repository_registry.is_enrolled(db, user_id)
