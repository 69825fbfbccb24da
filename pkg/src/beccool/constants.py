"""Physical constants used throughout (SI units)."""

ATOMIC_MASS_UNIT = 1.66053906660e-27  # kg
HBAR = 1.054571817e-34                # J s

RB87_MASS = 86.909180 * ATOMIC_MASS_UNIT  # kg
RB87_D2_WAVELENGTH = 780.241e-9           # m, imaging light default
