"""Few-level quantum-dot gate dynamics, phonon dephasing and spin readout."""

from qdgate.units import HBAR, KB

__version__ = "0.1.0"

__all__ = ["HBAR", "KB", "__version__"]
