from .core import ExperimentService
from .models import EVENTS, STATES, TRANSITIONS

__all__ = ["ExperimentService", "EVENTS", "STATES", "TRANSITIONS"]
