"""Sample-path large deviations for Lévy processes and random walks with
lognormal-type jumps: samplers, Skorokhod distances, rate functions and
rare-event checks."""

from .tail_models import REFERENCE, TailParams

__all__ = ["TailParams", "REFERENCE"]
__version__ = "0.1.0"
