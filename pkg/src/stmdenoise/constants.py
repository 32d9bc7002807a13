"""Unit conventions and physical constants.

Lengths are in nm and energies in eV everywhere in the package. The only
place SI values are converted is here.
"""

import math

from scipy import constants as _c

#: hbar^2 / (2 m_e) in eV nm^2.
HBAR2_OVER_2ME = _c.hbar**2 / (2.0 * _c.m_e) / _c.e * 1e18

EULER_GAMMA = 0.57721566490153286

#: Cu(111) Shockley surface state defaults.
CU111_M_EFF = 0.38
CU111_MU = 0.45


def kinetic_prefactor(m_eff: float) -> float:
    """hbar^2 / (2 m_eff m_e) in eV nm^2."""
    return HBAR2_OVER_2ME / m_eff


def clean_dos(m_eff: float) -> float:
    """Density of states of the 2D electron gas, m/(2 pi hbar^2), in 1/(eV nm^2)."""
    return 1.0 / (4.0 * math.pi * kinetic_prefactor(m_eff))
