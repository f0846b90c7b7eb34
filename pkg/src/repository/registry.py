from __future__ import annotations

from sqlalchemy import and_, or_
from sqlalchemy.orm import Session

from src.database.models import Authority, Registration
from src.schemas import RoleClass, SubjectAttributes


def get_registration(db: Session, ca_id: str, subject_id: str) -> Registration | None:
    """
    The get_registration function returns the registry entry of a subject at one CA, or None.

    :param db: Session: Registry session
    :param ca_id: str: Issuing CA
    :param subject_id: str: Registered id
    :return: The registration or None
    """
    return db.query(Registration).filter(
        and_(Registration.ca_id == ca_id, Registration.subject_id == subject_id)).first()


def create_registration(db: Session, ca_id: str, subject_id: str, secret_hash: str, role_class: RoleClass,
                        attributes: SubjectAttributes) -> Registration:
    """
    The create_registration function stores a new registry entry. Only the secret hash is kept.

    :param db: Session: Registry session
    :param ca_id: str: Issuing CA
    :param subject_id: str: New id
    :param secret_hash: str: bcrypt hash of the enrollment secret
    :param role_class: RoleClass: Role class of the identity
    :param attributes: SubjectAttributes: Attributes to embed at enrollment
    :return: The registration
    """
    registration = Registration(ca_id=ca_id, subject_id=subject_id, secret_hash=secret_hash,
                                role_class=role_class.value, user_id=attributes.user_id,
                                role=attributes.role, domain_id=attributes.domain_id)
    db.add(registration)
    db.commit()
    db.refresh(registration)
    return registration


def mark_enrolled(db: Session, registration: Registration) -> Registration:
    registration.enrolled = True
    registration.enrollment_count = (registration.enrollment_count or 0) + 1
    db.commit()
    return registration


def is_enrolled(db: Session, user_id: str) -> bool:
    """
    The is_enrolled function tells whether any CA has enrolled a subject with this user id.

    :param db: Session: Registry session
    :param user_id: str: User id to look up
    :return: True if an enrolled registration exists
    """
    return db.query(Registration).filter(
        and_(Registration.enrolled.is_(True),
             or_(Registration.user_id == user_id, Registration.subject_id == user_id))).first() is not None


def get_authority(db: Session, ca_id: str) -> Authority | None:
    return db.query(Authority).filter_by(ca_id=ca_id).first()


def create_authority(db: Session, ca_id: str, org_id: str, public_key: str) -> Authority:
    authority = Authority(ca_id=ca_id, org_id=org_id, public_key=public_key)
    db.add(authority)
    db.commit()
    db.refresh(authority)
    return authority


def list_authorities(db: Session) -> list[Authority]:
    return db.query(Authority).order_by(Authority.ca_id).all()
