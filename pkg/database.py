"""Database models and session management for the experiment run registry."""
from datetime import datetime

from sqlalchemy import create_engine, Column, Integer, String, Float, DateTime, ForeignKey
from sqlalchemy.orm import declarative_base, sessionmaker, relationship

from config import Config

Base = declarative_base()


def get_database_url():
    """Get database URL from configuration."""
    return Config.DATABASE_URL


# Create engine with dynamic configuration
engine = create_engine(get_database_url())
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


class ExperimentRun(Base):
    """One invocation of a lab command."""
    __tablename__ = 'experiment_runs'

    id = Column(Integer, primary_key=True)
    command = Column(String(50), nullable=False, index=True)
    config_digest = Column(String(64), nullable=False, index=True)  # sha256 of the canonical config JSON
    seed = Column(String(32), nullable=False)  # u64 does not fit a signed BIGINT
    mode = Column(String(10))
    status = Column(String(20), default='running')  # running, succeeded, failed
    exit_code = Column(Integer)
    output_dir = Column(String(500))

    started_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime)

    metrics = relationship("RunMetric", back_populates="run", cascade="all, delete-orphan")


class RunMetric(Base):
    """Headline numbers of a run (epsilon, delta, grid maximum, ...)."""
    __tablename__ = 'run_metrics'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('experiment_runs.id'), nullable=False, index=True)
    name = Column(String(100), nullable=False)
    value = Column(Float)

    run = relationship("ExperimentRun", back_populates="metrics")


def init_db():
    """Initialize the database."""
    Base.metadata.create_all(bind=engine)


def get_db():
    """Get database session."""
    return SessionLocal()
