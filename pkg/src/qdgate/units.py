"""Unit conventions.

Energies are in meV and times in ps throughout the gate and phonon code.
The readout module works in ns and ns^-1 because spontaneous emission is
slow compared with the coherent drive.
"""

from scipy import constants

HBAR = 0.6582119  # meV ps
KB = 0.0861733  # meV / K

MEV = constants.electron_volt * 1e-3  # J per meV
EV = constants.electron_volt
HBAR_SI = constants.hbar
EPS0 = constants.epsilon_0
E_CHARGE = constants.elementary_charge

PS_PER_NS = 1e3
