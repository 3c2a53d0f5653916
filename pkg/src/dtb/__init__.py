"""Framewise polyphonic transcription experiments on note-combination entanglement."""

__version__ = "0.1.0"
