from .base import Base, get_db_context, get_session_factory
from .models import (
    Run,
    RunStage,
)

__all__ = [
    'Base',
    'get_db_context',
    'get_session_factory',
    'Run',
    'RunStage',
]
