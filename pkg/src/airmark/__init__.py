"""Airfield surface perception: classify runway vs taxiway, label markings."""

__version__ = "0.1.0"
