"""Joint pricing and pre-trip/on-trip matching for shared rides."""

__version__ = "0.1.0"
