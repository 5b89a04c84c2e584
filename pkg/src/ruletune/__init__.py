"""Mine, retrieve and apply quantitative knob-tuning rules."""

__version__ = "0.1.0"
