"""
weakkv - Eingebettete transaktionale Key-Value-Engine
ACID mit entkoppelter Dauerhaftigkeit: commit macht Änderungen sichtbar,
erst persist macht sie crash-fest.
"""

__version__ = "1.0.0"
