"""IFR visibility nowcasting from METAR archives with boosted trees and TreeSHAP."""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
