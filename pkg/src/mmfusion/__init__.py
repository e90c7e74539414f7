"""Multimodal late-fusion classification with hand-crafted texture features."""

__version__ = "0.1.0"
