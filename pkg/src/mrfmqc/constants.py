"""Physical constants (SI) and unit helpers shared by every module."""

MU0_OVER_4PI = 1e-7  # H/m
MU_B = 9.274e-24  # J/T
K_B = 1.381e-23  # J/K

# default gyromagnetic ratios divided by 2*pi, Hz/T
GAMMA_E = 2.8e10
GAMMA_N_PROTON = 4.3e7

ANGSTROM = 1e-10


def angstrom(value):
    return value * ANGSTROM
