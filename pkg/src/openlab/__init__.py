"""Remote-laboratory stack: instrument server, connector, and control blocks."""

__version__ = "0.1.0"
