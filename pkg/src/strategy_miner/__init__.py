"""Mine study strategies from course clickstreams."""

__version__ = "0.1.0"
