"""Backchannel prediction from speaker audio plus interlocutor behavior embeddings."""
__version__ = "0.1.0"
