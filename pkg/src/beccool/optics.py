"""Shadowgraph image synthesis: Thomas-Fermi phase profiles, full Fresnel
propagation with a Gaussian-pupil resolution kernel, the thin-sample
linearized intensity, reference frames and photon shot noise.

Convention: image arrays have shape (nz, nx) with x along the columns; the
coordinate origin sits at pixel (nz//2, nx//2).  All spectral operators assume
a periodic grid, so objects should stay well inside the frame.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as sfft

from .constants import RB87_D2_WAVELENGTH


def _is_pow2(n):
    return n >= 2 and (n & (n - 1)) == 0


@dataclass
class GridSpec:
    """Uniform pixel grid: nx, nz pixels at ``pitch`` meters per pixel."""

    nx: int = 128
    nz: int = 128
    pitch: float = 5.5e-6

    def __post_init__(self):
        if not (_is_pow2(self.nx) and _is_pow2(self.nz)):
            raise ValueError("grid dimensions must be powers of two")
        if self.pitch <= 0:
            raise ValueError("pixel pitch must be positive")

    @cached_property
    def x(self):
        """Pixel-center x coordinates (m), zero at index nx//2."""
        return (np.arange(self.nx) - self.nx // 2) * self.pitch

    @cached_property
    def z(self):
        return (np.arange(self.nz) - self.nz // 2) * self.pitch

    @cached_property
    def xx(self):
        return np.broadcast_to(self.x[None, :], (self.nz, self.nx))

    @cached_property
    def zz(self):
        return np.broadcast_to(self.z[:, None], (self.nz, self.nx))

    @cached_property
    def kx(self):
        """Angular spatial frequencies along x (rad/m), FFT ordering."""
        return 2 * np.pi * np.fft.fftfreq(self.nx, d=self.pitch)

    @cached_property
    def kz(self):
        return 2 * np.pi * np.fft.fftfreq(self.nz, d=self.pitch)

    @cached_property
    def k_sq(self):
        return self.kx[None, :] ** 2 + self.kz[:, None] ** 2

    @cached_property
    def kx_half(self):
        """rfft-layout x frequencies (for real-field transforms)."""
        return 2 * np.pi * np.fft.rfftfreq(self.nx, d=self.pitch)

    @cached_property
    def k_sq_half(self):
        return self.kx_half[None, :] ** 2 + self.kz[:, None] ** 2


@dataclass
class ImageGrid:
    """A scalar field sampled on a GridSpec (intensity, phase or density)."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.shape != (self.grid.nz, self.grid.nx):
            raise ValueError(
                f"data shape {self.data.shape} does not match grid "
                f"({self.grid.nz}, {self.grid.nx})"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite samples")


@dataclass
class PhaseParams:
    """Thomas-Fermi phase profile: peak phase, radii and center."""

    phi0: float = -0.08
    r_x: float = 5e-6 * 70.3 / 20.3
    r_z: float = 5e-6
    x0: float = 0.0
    z0: float = 0.0

    def __post_init__(self):
        if self.r_x <= 0 or self.r_z <= 0:
            raise ValueError("Thomas-Fermi radii must be positive")


@dataclass
class OpticsParams:
    """Imaging-chain parameters.

    ``xi`` is the defocus distance between sample and object plane, ``eta``
    the Gaussian-pupil resolution scale.  ``delta_tilde`` (detuning in
    half-linewidths) and ``sigma0`` (resonant cross-section) fix the physical
    phase scale but are carried as documented constants only; image synthesis
    works directly from the peak phase.
    """

    xi: float = 800e-6
    wavelength: float = RB87_D2_WAVELENGTH
    eta: float = 5.5e-6
    delta_tilde: float = -1800.0
    sigma0: float = 2.907e-13

    def __post_init__(self):
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.eta < 0:
            raise ValueError("resolution scale must be >= 0")

    @property
    def k(self):
        """Probe wavenumber (rad/m)."""
        return 2 * np.pi / self.wavelength


def tf_phase(params, grid):
    """Pointwise Thomas-Fermi phase: phi0 (1 - u)^{3/2} inside the ellipse.

    u is the squared elliptic radius; the profile is identically zero outside
    and continuous at the boundary.
    """
    u = ((grid.xx - params.x0) / params.r_x) ** 2 + ((grid.zz - params.z0) / params.r_z) ** 2
    out = np.zeros((grid.nz, grid.nx))
    inside = u <= 1.0
    out[inside] = params.phi0 * (1.0 - u[inside]) ** 1.5
    return ImageGrid(grid, out)


def _j2_over_x2(x):
    """j2(x)/x^2 (spherical Bessel) with a series fallback near the origin."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-3
    xs = x[small]
    out[small] = 1.0 / 15.0 - xs**2 / 210.0
    xl = x[~small]
    out[~small] = ((3.0 / xl**3 - 1.0 / xl) * np.sin(xl) - (3.0 / xl**2) * np.cos(xl)) / xl**2
    return out


def _tf_spectrum_on(params, kx, kz):
    # 2D Fourier transform of the TF profile: 6 pi j2(kappa)/kappa^2 times
    # the ellipse area scale, with the center shift as a separable phase
    kap = np.sqrt((kx[None, :] * params.r_x) ** 2 + (kz[:, None] * params.r_z) ** 2)
    amp = params.phi0 * params.r_x * params.r_z * 6.0 * np.pi * _j2_over_x2(kap)
    shift = np.exp(-1j * kx[None, :] * params.x0) * np.exp(-1j * kz[:, None] * params.z0)
    return amp * shift


def tf_phase_spectrum(params, grid):
    """Continuous Fourier transform of the TF phase on the full DFT grid."""
    return _tf_spectrum_on(params, grid.kx, grid.kz)


def phase_from_spectrum(spec, grid):
    """Band-limited real-space phase from a continuous-FT sample (centered)."""
    return ImageGrid(grid, np.fft.fftshift(sfft.ifft2(spec).real) / grid.pitch**2)


def fresnel_image(phase, opt):
    """Full shadowgraph intensity by Fourier-domain paraxial propagation.

    The unit-amplitude field exp(-i phi) is filtered by the Gaussian pupil
    exp(-eta^2 k^2), propagated by the defocus kernel exp(i xi k^2 / 2k) and
    squared; the empty-frame intensity is exactly 1.
    """
    grid = phase.grid
    if not (_is_pow2(grid.nx) and _is_pow2(grid.nz)):
        raise ValueError("spectral propagation needs power-of-two grids")
    kernel = np.exp(-opt.eta**2 * grid.k_sq) * np.exp(1j * opt.xi / (2 * opt.k) * grid.k_sq)
    field = sfft.ifft2(kernel * sfft.fft2(np.exp(-1j * phase.data)))
    return ImageGrid(grid, np.abs(field) ** 2)


def linearized_image(phase, opt):
    """Thin-sample, small-defocus intensity: I = 1 - (xi/k) * laplacian(phi).

    The transverse Laplacian is evaluated spectrally, so plane-wave phases are
    eigenfunctions and the frame mean stays exactly 1.
    """
    grid = phase.grid
    lap = sfft.irfft2(-grid.k_sq_half * sfft.rfft2(phase.data), s=(grid.nz, grid.nx))
    return ImageGrid(grid, 1.0 - opt.xi / opt.k * lap)


def apply_resolution(field, opt):
    """Gaussian-pupil blur exp(-eta^2 k^2) applied in the Fourier domain."""
    grid = field.grid
    ker = np.exp(-opt.eta**2 * grid.k_sq_half)
    return ImageGrid(grid, sfft.irfft2(ker * sfft.rfft2(field.data), s=(grid.nz, grid.nx)))


class FrameRenderer:
    """Fast alias-free renderer for the in-loop imaging chain.

    Samples the analytic TF spectrum on the (half) DFT grid, applies the
    resolution kernel and the linearized shadowgraph response in one pass, and
    inverse-transforms once per frame:

        I = 1 + (xi/k) * IFFT[ k^2 exp(-eta^2 k^2) * phi_hat ]

    This equals linearized_image(resolution-blurred phase) but without the
    pixel-sampling aliasing a pointwise phase evaluation would introduce.
    """

    def __init__(self, grid, opt):
        self.grid = grid
        self.opt = opt
        k_sq = grid.k_sq_half
        self._resp = (opt.xi / opt.k) * k_sq * np.exp(-opt.eta**2 * k_sq) / grid.pitch**2

    def phase_spectrum(self, params):
        return _tf_spectrum_on(params, self.grid.kx_half, self.grid.kz)

    def render(self, params):
        spec = self._resp * self.phase_spectrum(params)
        lap = sfft.irfft2(spec, s=(self.grid.nz, self.grid.nx))
        return ImageGrid(self.grid, 1.0 + np.fft.fftshift(lap))

    def render_fresnel(self, params):
        """Full-model render (pointwise phase + Fresnel kernel), for fidelity runs."""
        return fresnel_image(tf_phase(params, self.grid), self.opt)


def render_frame(params, opt, grid, model="linear"):
    """One-shot frame synthesis; ``model`` is 'linear' or 'fresnel'."""
    r = FrameRenderer(grid, opt)
    if model == "linear":
        return r.render(params)
    if model == "fresnel":
        return r.render_fresnel(params)
    raise ValueError(f"unknown render model {model!r}")


DEFAULT_FRINGES = (
    (0.02, (9e3, 4e3), 0.7),
    (0.02, (-3e3, 12e3), 2.1),
)


def make_reference(grid, fringes=DEFAULT_FRINGES, noise_std=0.0, rng=None):
    """Reference (no-atom) frame: unity plus low-frequency fringes and noise.

    Each fringe is (amplitude, (qx, qz) rad/m, phase offset).  Matched fringes
    in probe and reference cancel exactly in the estimator's ratio.
    """
    data = np.ones((grid.nz, grid.nx))
    for amp, (qx, qz), ph in fringes:
        data += amp * np.cos(qx * grid.xx + qz * grid.zz + ph)
    if noise_std:
        if rng is None:
            raise ValueError("reference noise requires an rng")
        data += noise_std * rng.standard_normal(data.shape)
    return ImageGrid(grid, data)


def add_shot_noise(image, photons_per_pixel, rng):
    """Gaussian photon shot noise: mean I, standard deviation sqrt(I/N)."""
    if photons_per_pixel <= 0:
        raise ValueError("photon budget must be positive")
    sigma = np.sqrt(np.abs(image.data) / photons_per_pixel)
    return ImageGrid(image.grid, image.data + sigma * rng.standard_normal(image.data.shape))


def write_ascii_grid(image, path):
    """Plain-text dump: header 'nx nz pitch_m' then one sample per line, row-major."""
    with open(path, "w") as f:
        f.write(f"{image.grid.nx} {image.grid.nz} {image.grid.pitch:.9e}\n")
        np.savetxt(f, image.data.reshape(-1), fmt="%.12e")


def read_ascii_grid(path):
    with open(path) as f:
        nx, nz, pitch = f.readline().split()
        grid = GridSpec(nx=int(nx), nz=int(nz), pitch=float(pitch))
        data = np.loadtxt(f).reshape(grid.nz, grid.nx)
    return ImageGrid(grid, data)


def write_pgm16(image, path):
    """16-bit binary portable graymap, full-range normalized (visualization)."""
    lo, hi = image.data.min(), image.data.max()
    span = hi - lo if hi > lo else 1.0
    scaled = np.round((image.data - lo) / span * 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{image.grid.nx} {image.grid.nz}\n65535\n".encode())
        f.write(scaled.tobytes())
