"""Real-time in-situ pipeline: reference division, regularized inverse
Laplacian, background-offset removal, the rho^6 nonlinear filter, moment
extraction, digital low-pass filtering and finite differences.

The pipeline is deterministic: an identical frame and identical filter state
always produce the identical measurement.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy import fft as sfft

from .optics import ImageGrid


@dataclass
class MeasurementVector:
    """Real-time estimates: positions, width, plus the uncontrolled z width.

    Values are the feedback-path quantities, i.e. x_hat and w_hat are the
    low-pass-filtered versions while z_hat is unfiltered.
    """

    x_hat: float = 0.0
    z_hat: float = 0.0
    w_hat: float = 0.0
    t: float = 0.0
    w_z_hat: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        if not np.all(np.isfinite([self.x_hat, self.z_hat, self.w_hat])):
            raise ValueError("measurement must be finite")
        if self.w_hat < 0:
            raise ValueError("width estimate must be >= 0")

    def as_array(self):
        return np.array([self.x_hat, self.z_hat, self.w_hat])


@dataclass
class RegionMask:
    """Disjoint pixel regions: where atoms may live, and pure background."""

    atoms: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        if self.atoms.shape != self.background.shape:
            raise ValueError("mask shapes differ")
        if not self.atoms.any() or not self.background.any():
            raise ValueError("both regions must be nonempty")
        if np.any(self.atoms & self.background):
            raise ValueError("atom and background regions must be disjoint")

    @classmethod
    def centered(cls, grid, halfwidth_px=12, margin_frac=0.15):
        """Square atom region at the frame center; background = outer margin band."""
        atoms = np.zeros((grid.nz, grid.nx), dtype=bool)
        cz, cx = grid.nz // 2, grid.nx // 2
        atoms[cz - halfwidth_px:cz + halfwidth_px, cx - halfwidth_px:cx + halfwidth_px] = True
        mz, mx = int(margin_frac * grid.nz), int(margin_frac * grid.nx)
        background = np.ones((grid.nz, grid.nx), dtype=bool)
        background[mz:-mz, mx:-mx] = False
        if np.any(atoms & background):
            raise ValueError("atom region reaches into the background margin")
        return cls(atoms=atoms, background=background)


def density_estimate(frame, reference, mask):
    """Scaled column-density estimate from a probe/reference frame pair.

    Computes the Fourier-domain inverse Laplacian of the measurement current
    I_n/I_0 - 1 with the singular DC bin set to zero, then removes a constant
    offset so the background region averages to zero.  Output units are
    arbitrary (proportional to the imprinted phase).
    """
    if np.any(reference.data <= 0):
        raise ValueError("reference frame must be strictly positive")
    grid = frame.grid
    current = frame.data / reference.data - 1.0
    spec = sfft.rfft2(current)
    k_sq = grid.k_sq_half
    inv = np.zeros_like(k_sq)
    nonzero = k_sq > 0
    inv[nonzero] = 1.0 / k_sq[nonzero]  # DC bin stays zero: the regularizer
    rho = sfft.irfft2(spec * inv, s=(grid.nz, grid.nx))
    rho -= rho[mask.background].mean()
    return ImageGrid(grid, rho)


def nonlinear_filter(rho):
    """Pointwise sixth power; non-negative output, sharpens high-SNR regions."""
    if isinstance(rho, ImageGrid):
        return ImageGrid(rho.grid, rho.data**6)
    return np.asarray(rho) ** 6


def moment(weights, mask, grid, axis="x", order=1):
    """Weighted coordinate moment over the atom region only."""
    w = np.where(mask.atoms, weights.data if isinstance(weights, ImageGrid) else weights, 0.0)
    total = w.sum()
    if total <= 0:
        raise ValueError("moment weights vanish on the atom region")
    coord = grid.xx if axis == "x" else grid.zz
    return float((w * coord**order).sum() / total)


def extract_moments(rho6, mask, grid):
    """Centers and widths from the filtered density.

    Returns (x, z, w_x, w_z, mass); widths are second central moments, so for
    a Gaussian profile they read sigma/sqrt(6) of the unfiltered cloud.
    """
    w = np.where(mask.atoms, rho6.data if isinstance(rho6, ImageGrid) else rho6, 0.0)
    mass = w.sum()
    if mass <= 0:
        raise ValueError("filtered density has no mass in the atom region")
    x1 = (w * grid.xx).sum() / mass
    z1 = (w * grid.zz).sum() / mass
    x2 = (w * grid.xx**2).sum() / mass
    z2 = (w * grid.zz**2).sum() / mass
    w_x = np.sqrt(max(x2 - x1**2, 0.0))
    w_z = np.sqrt(max(z2 - z1**2, 0.0))
    return float(x1), float(z1), float(w_x), float(w_z), float(mass)


class LowPass:
    """First-order digital low-pass: y_n = a u_n + (1-a) y_{n-1}.

    The coefficient maps the analog pole, a = 1 - exp(-2 pi f_c tau).  The
    state initializes on the first sample so a constant input passes through
    unchanged from the start.
    """

    def __init__(self, cutoff_hz, sample_period):
        if cutoff_hz <= 0 or sample_period <= 0:
            raise ValueError("cutoff and sample period must be positive")
        self.cutoff_hz = cutoff_hz
        self.sample_period = sample_period
        self.alpha = 1.0 - np.exp(-2 * np.pi * cutoff_hz * sample_period)
        self.y = None

    def update(self, u):
        self.y = u if self.y is None else self.alpha * u + (1 - self.alpha) * self.y
        return self.y

    def reset(self):
        self.y = None


def finite_difference(m_i, m_prev):
    """Raw per-sample difference; the controller gain absorbs the 1/tau."""
    return np.asarray(m_i, dtype=float) - np.asarray(m_prev, dtype=float)


@dataclass
class EstimatorConfig:
    region_halfwidth_px: int = 12
    background_margin_frac: float = 0.15
    x_cutoff_hz: float = 60.0
    w_cutoff_hz: float = 100.0
    sample_period: float = 1e-3
    # frames whose rho^6 mass falls below this fraction of the first frame's
    # mass are declared degenerate: hold the last measurement and flag it
    degenerate_mass_fraction: float = 1e-4


class InSituEstimator:
    """Stateful frame-to-measurement pipeline for one control loop."""

    def __init__(self, grid, cfg=None, mask=None):
        self.grid = grid
        self.cfg = cfg or EstimatorConfig()
        self.mask = mask or RegionMask.centered(
            grid, self.cfg.region_halfwidth_px, self.cfg.background_margin_frac
        )
        self.lp_x = LowPass(self.cfg.x_cutoff_hz, self.cfg.sample_period)
        self.lp_w = LowPass(self.cfg.w_cutoff_hz, self.cfg.sample_period)
        self.last = None
        self.last_raw = None
        self._mass_ref = None

    def reset(self):
        self.lp_x.reset()
        self.lp_w.reset()
        self.last = None
        self.last_raw = None
        self._mass_ref = None

    def process(self, frame, reference, t):
        """One frame through the whole pipeline; returns the feedback measurement."""
        rho = density_estimate(frame, reference, self.mask)
        rho6 = nonlinear_filter(rho)
        mass = np.where(self.mask.atoms, rho6.data, 0.0).sum()
        if self._mass_ref is None:
            self._mass_ref = mass
        if mass <= self.cfg.degenerate_mass_fraction * self._mass_ref:
            if self.last is None:
                raise ValueError(f"degenerate first frame at t={t:.4f}")
            held = replace(self.last, t=t, degenerate=True)
            self.last = held
            return held
        x, z, w_x, w_z, _ = extract_moments(rho6, self.mask, self.grid)
        self.last_raw = MeasurementVector(x_hat=x, z_hat=z, w_hat=w_x, t=t, w_z_hat=w_z)
        mv = MeasurementVector(
            x_hat=self.lp_x.update(x),
            z_hat=z,  # no filter on z: extra delay would degrade its loop
            w_hat=self.lp_w.update(w_x),
            t=t,
            w_z_hat=w_z,
        )
        self.last = mv
        return mv
