from sqlalchemy import Boolean, Column, DateTime, Integer, String, Text, UniqueConstraint, func
from sqlalchemy.orm import declarative_base

Base = declarative_base()


class Authority(Base):
    __tablename__ = 'authorities'
    id = Column(Integer, primary_key=True)
    ca_id = Column(String(100), nullable=False, unique=True)
    org_id = Column(String(100), nullable=False, unique=True)
    public_key = Column(Text, nullable=False)
    created_at = Column(DateTime, default=func.now())


class Registration(Base):
    __tablename__ = 'registrations'
    __table_args__ = (UniqueConstraint('ca_id', 'subject_id', name='uq_registration_subject'),)
    id = Column(Integer, primary_key=True, index=True)
    ca_id = Column(String(100), nullable=False, index=True)
    subject_id = Column(String(150), nullable=False, index=True)
    secret_hash = Column(String(255), nullable=False)
    role_class = Column(String(20), nullable=False)
    user_id = Column(String(150), nullable=False)
    role = Column(String(100), nullable=False)
    domain_id = Column(String(100), nullable=False)
    enrolled = Column(Boolean, default=False)
    enrollment_count = Column(Integer, default=0)
    created_at = Column(DateTime, default=func.now())
    updated_at = Column(DateTime, default=func.now(), onupdate=func.now())
