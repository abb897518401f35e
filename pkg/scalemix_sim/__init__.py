"""Space-time random scale mixtures for extreme rainfall: simulation, tail summaries and neural fitting."""

__version__ = '1.0.0'
