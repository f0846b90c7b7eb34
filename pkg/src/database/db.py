import logging
from contextlib import contextmanager

from sqlalchemy import create_engine
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import Session, sessionmaker
from sqlalchemy.pool import StaticPool

from src.database.models import Base

logger = logging.getLogger(__name__)


def make_engine(url: str):
    """
    The make_engine function creates the engine for the CA registry.
    In-memory sqlite databases share one connection so every session sees the same tables.

    :param url: str: SQLAlchemy database URL
    :return: An engine
    """
    kwargs = {}
    if url.startswith('sqlite'):
        kwargs['connect_args'] = {'check_same_thread': False}
        if ':memory:' in url or url == 'sqlite://':
            kwargs['poolclass'] = StaticPool
    return create_engine(url, **kwargs)


def make_session_factory(url: str) -> sessionmaker:
    engine = make_engine(url)
    Base.metadata.create_all(bind=engine)
    return sessionmaker(bind=engine, autoflush=False, autocommit=False, expire_on_commit=False)


@contextmanager
def get_db(session_factory: sessionmaker) -> Session:
    db = session_factory()
    try:
        yield db
    except SQLAlchemyError as err:
        db.rollback()
        logger.error('registry transaction rolled back: %s', err)
        raise
    finally:
        db.close()
