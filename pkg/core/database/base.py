from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, declarative_base, Session
from pathlib import Path
from typing import Dict, Generator, Union
from contextlib import contextmanager

REGISTRY_FILENAME = "registry.db"

# Create Base class
Base = declarative_base()

_session_factories: Dict[Path, sessionmaker] = {}

def get_database_path(output_dir: Union[str, Path]) -> Path:
    """Get the registry file path for an output directory."""
    return Path(output_dir).resolve() / REGISTRY_FILENAME

def create_database_engine(output_dir: Union[str, Path]):
    """Create and return the registry engine, creating tables on first use."""
    database_path = get_database_path(output_dir)

    # Ensure the directory exists
    database_path.parent.mkdir(parents=True, exist_ok=True)

    engine = create_engine(f"sqlite:///{database_path}", connect_args={"check_same_thread": False})
    Base.metadata.create_all(bind=engine)
    return engine

def get_session_factory(output_dir: Union[str, Path]) -> sessionmaker:
    """One session factory per registry file."""
    database_path = get_database_path(output_dir)
    if database_path not in _session_factories:
        engine = create_database_engine(output_dir)
        _session_factories[database_path] = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    return _session_factories[database_path]

@contextmanager
def get_db_context(output_dir: Union[str, Path]) -> Generator[Session, None, None]:
    """Context manager for registry sessions."""
    db = get_session_factory(output_dir)()
    try:
        yield db
    finally:
        db.close()
