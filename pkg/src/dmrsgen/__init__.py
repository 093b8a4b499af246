"""Neural generation of English text from DMRS graphs."""

__version__ = "0.1.0"
