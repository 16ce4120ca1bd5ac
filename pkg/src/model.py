import os
from datetime import datetime
from enum import Enum
from typing import Optional

from sqlalchemy import MetaData, ForeignKey, Text, create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column

DEFAULT_REGISTRY_URL = "sqlite:///registry.db"


def registry_url() -> str:
    return os.environ.get("FOODSHOCK_REGISTRY_URL", DEFAULT_REGISTRY_URL)


def create_registry(url: Optional[str] = None) -> Engine:
    """
    Opens the run registry and creates missing tables. Deployed registries are migrated with alembic instead.
    :param url: SQLAlchemy database URL, FOODSHOCK_REGISTRY_URL when omitted
    :return:
    """
    engine = create_engine(url or registry_url())
    Base.metadata.create_all(engine)
    return engine


def _unique(session, cls, hashfunc, queryfunc, constructor, arg, kw):
    cache = session.info.get("_unique_cache", None)
    if cache is None:
        session.info['_unique_cache'] = cache = {}

    key = (cls, hashfunc(*arg, **kw))
    if key in cache:
        return cache[key]
    else:
        with session.no_autoflush:
            q = session.query(cls)
            q = queryfunc(q, *arg, **kw)
            obj = q.first()
            if not obj:
                obj = constructor(*arg, **kw)
                session.add(obj)
        cache[key] = obj
        return obj


class UniqueMixin(object):
    @classmethod
    def unique_hash(cls, *arg, **kw):
        raise NotImplementedError()

    @classmethod
    def unique_filter(cls, query, *arg, **kw):
        raise NotImplementedError()

    @classmethod
    def as_unique(cls, session, *arg, **kw):
        return _unique(
                    session,
                    cls,
                    cls.unique_hash,
                    cls.unique_filter,
                    cls,
                    arg, kw
               )


class RunStatus(Enum):
    RUNNING = "running"
    FINISHED = "finished"
    FAILED = "failed"


class Base(DeclarativeBase):
    metadata = MetaData(naming_convention={
        "ix": "ix_%(column_0_label)s",
        "uq": "uq_%(table_name)s_%(column_0_name)s",
        "ck": "ck_%(table_name)s_%(constraint_name)s",
        "fk": "fk_%(table_name)s_%(column_0_name)s_%(referred_table_name)s",
        "pk": "pk_%(table_name)s"
    })
    pass


class KnownRun(Base, UniqueMixin):
    __tablename__ = "known_runs"

    run_id: Mapped[str] = mapped_column(primary_key=True)

    command: Mapped[str]
    config_hash: Mapped[str]
    output_dir: Mapped[str]
    status: Mapped[str] = mapped_column(default=RunStatus.RUNNING.value)
    manifest: Mapped[Optional[str]] = mapped_column(Text)

    created_at: Mapped[datetime] = mapped_column(default=datetime.now)
    finished_at: Mapped[Optional[datetime]]

    def __init__(self, run_id: str, command: str = "", config_hash: str = "", output_dir: str = ""):
        super().__init__()
        self.run_id = run_id
        self.command = command
        self.config_hash = config_hash
        self.output_dir = output_dir
        self.status = RunStatus.RUNNING.value
        self.created_at = datetime.now()

    def finish(self, manifest: str, status: RunStatus = RunStatus.FINISHED):
        self.manifest = manifest
        self.status = status.value
        self.finished_at = datetime.now()

    @classmethod
    def unique_hash(cls, run_id, **kw):
        return run_id

    # noinspection PyMethodOverriding
    @classmethod
    def unique_filter(cls, query, run_id, **kw):
        return query.filter(KnownRun.run_id == run_id)


class SuperpositionSampleRecord(Base, UniqueMixin):
    __tablename__ = "superposition_samples"

    sweep_id: Mapped[str] = mapped_column(ForeignKey("known_runs.run_id"), primary_key=True)
    sample_index: Mapped[int] = mapped_column(primary_key=True)

    first_sector: Mapped[int]
    second_sector: Mapped[int]
    si_items: Mapped[float]
    si_all: Mapped[float]
    class_items: Mapped[str]
    class_all: Mapped[str]

    @classmethod
    def unique_hash(cls, sweep_id, sample_index, **kw):
        return f"{sweep_id}#{sample_index}"

    # noinspection PyMethodOverriding
    @classmethod
    def unique_filter(cls, query, sweep_id, sample_index, **kw):
        return (query.filter(SuperpositionSampleRecord.sweep_id == sweep_id)
                .filter(SuperpositionSampleRecord.sample_index == sample_index))
