"""Event-camera reconstruction of spinning objects."""
from ._accel import backend_name
from .events import Event, EventStream, SAE, load_events, make_stream, save_events

__version__ = "0.1.0"

__all__ = ["Event", "EventStream", "SAE", "backend_name", "load_events", "make_stream",
           "save_events", "__version__"]
