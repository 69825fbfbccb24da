"""Collective-mode plant: horizontal/vertical dipole modes and the axial width
mode of a trapped condensate, driven by four actuator voltages through a linear
open-loop transfer matrix.

Each mode is a harmonic oscillator about an equilibrium set by the current trap
parameters.  Trap parameters are piecewise constant over a sample, so every
step uses the exact rotation solution of the oscillator instead of a numerical
integrator; open-loop energy is conserved to machine precision.
"""

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import HBAR, RB87_MASS

# Low-lying axial quadrupole of a prolate trap oscillates at sqrt(5/2) * omega_x.
QUADRUPOLE_RATIO = float(np.sqrt(2.5))

# Nominal open-loop transfer entries (SI): piezo channels in m/V, power
# channels in m/V (vertical sag) and (rad/s)^2/V (trap-curvature change).
G_XX = -14.4e-6
G_ZZ = -1.83e-6
G_Z64 = 33e-6
G_Z90 = 77e-6
G_W64 = (2 * np.pi * 26.7) ** 2
G_W90 = (2 * np.pi * 19.9) ** 2


@dataclass
class TrapConfig:
    """Static trap and atom parameters.

    Frequencies are in Hz; ``w_eq0`` is the equilibrium axial half-width of
    the condensate (Thomas-Fermi radius along x).  The vertical-direction
    (y) frequency is carried for completeness but no y dynamics are modeled.
    """

    f_x: float = 20.3
    f_y: float = 85.6
    f_z: float = 70.3
    x_trap0: float = 0.0
    z_trap0: float = 0.0
    atom_mass: float = RB87_MASS
    hbar: float = HBAR
    # z-direction TF radius ~5 um scaled by f_z/f_x (radius ~ 1/omega)
    w_eq0: float = 5e-6 * 70.3 / 20.3
    width_damping: float = 0.0  # 1/s, exponential amplitude decay of the width mode

    def __post_init__(self):
        if not (self.f_x > 0 and self.f_y > 0 and self.f_z > 0):
            raise ValueError("trap frequencies must be strictly positive")
        if self.w_eq0 <= 0:
            raise ValueError("equilibrium width must be strictly positive")
        if self.width_damping < 0:
            raise ValueError("width damping rate must be >= 0")

    @property
    def omega_x(self):
        return 2 * np.pi * self.f_x

    @property
    def omega_y(self):
        return 2 * np.pi * self.f_y

    @property
    def omega_z(self):
        return 2 * np.pi * self.f_z

    @property
    def omega_q(self):
        return QUADRUPOLE_RATIO * self.omega_x

    def a_ho(self, omega):
        """Harmonic oscillator length sqrt(hbar / (m omega))."""
        return np.sqrt(self.hbar / (self.atom_mass * omega))


@dataclass
class ActuatorVector:
    """The four control voltages: two steering piezos and two beam powers."""

    v_x: float = 0.0
    v_z: float = 0.0
    v_64: float = 0.0
    v_90: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("actuator voltages must be finite")

    def as_array(self):
        return np.array([self.v_x, self.v_z, self.v_64, self.v_90], dtype=float)

    @classmethod
    def from_array(cls, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (4,):
            raise ValueError("actuator vector must have 4 components")
        return cls(*u)

    def clamped(self, limit):
        """Symmetric saturation clamp at +/- limit volts (None = no clamp)."""
        if limit is None:
            return self
        return ActuatorVector.from_array(np.clip(self.as_array(), -limit, limit))


@dataclass
class SignalVector:
    """Trap-parameter changes: center shifts (m) and x-curvature change ((rad/s)^2)."""

    dx_trap: float = 0.0
    dz_trap: float = 0.0
    domega_x_sq: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("signal vector must be finite")

    def as_array(self):
        return np.array([self.dx_trap, self.dz_trap, self.domega_x_sq], dtype=float)

    @classmethod
    def from_array(cls, s):
        s = np.asarray(s, dtype=float)
        if s.shape != (3,):
            raise ValueError("signal vector must have 3 components")
        return cls(*s)

    def __add__(self, other):
        return SignalVector.from_array(self.as_array() + other.as_array())


def nominal_transfer_matrix():
    """Nominal 3x4 open-loop transfer matrix from voltages to trap changes."""
    return np.array(
        [
            [G_XX, 0.0, 0.0, 0.0],
            [0.0, G_ZZ, G_Z64, G_Z90],
            [0.0, 0.0, G_W64, G_W90],
        ]
    )


def perturb_transfer_matrix(g, rng, scale):
    """Multiplicative per-entry jitter on the nonzero entries of G.

    Models slow actuator drift (piezo hysteresis, electronic offsets) as a
    per-run perturbation: each nonzero entry is scaled by (1 + scale * N(0,1)).
    """
    g = np.array(g, dtype=float, copy=True)
    if scale:
        jitter = 1.0 + scale * rng.standard_normal(g.shape)
        g[g != 0] *= jitter[g != 0]
    return g


def actuator_to_signal(u, g):
    """Apply the open-loop transfer matrix: s = G u (exact linear map)."""
    g = np.asarray(g, dtype=float)
    if g.shape != (3, 4):
        raise ValueError("transfer matrix must be 3x4")
    return SignalVector.from_array(g @ u.as_array())


@dataclass
class PlantState:
    """Mode coordinates/velocities plus the scenario trap offsets and time.

    ``w`` is the axial half-width of the condensate (strictly positive);
    ``trap`` holds externally applied trap offsets (kicks, drives) on top of
    which the harness adds per-sample actuator contributions.
    """

    x: float = 0.0
    vx: float = 0.0
    z: float = 0.0
    vz: float = 0.0
    w: float = 17.31e-6
    vw: float = 0.0
    trap: SignalVector = field(default_factory=SignalVector)
    t: float = 0.0

    def __post_init__(self):
        if self.w <= 0:
            raise ValueError("width-mode coordinate must be strictly positive")


def equilibrium_state(cfg, t=0.0):
    """State at rest at the unperturbed trap equilibrium."""
    return PlantState(
        x=cfg.x_trap0, vx=0.0, z=cfg.z_trap0, vz=0.0, w=cfg.w_eq0, vw=0.0,
        trap=SignalVector(), t=t,
    )


def width_equilibrium(cfg, domega_x_sq):
    """Equilibrium width under a trap-curvature change.

    Linearized Thomas-Fermi scaling (radius ~ 1/omega at fixed chemical
    potential): delta w_eq / w_eq = -delta(omega_x^2) / (2 omega_x^2).
    """
    return cfg.w_eq0 * (1.0 - domega_x_sq / (2.0 * cfg.omega_x**2))


def _rotate(r, v, center, omega, dt):
    # exact free rotation of (r - center, v) at angular frequency omega
    c, s = np.cos(omega * dt), np.sin(omega * dt)
    u = r - center
    return center + u * c + (v / omega) * s, -omega * u * s + v * c


def _rotate_damped(r, v, center, omega, gamma, dt):
    # exact underdamped solution; gamma is the amplitude decay rate
    if gamma == 0.0:
        return _rotate(r, v, center, omega, dt)
    if gamma >= omega:
        raise ValueError("width damping must stay below the mode frequency")
    wd = np.sqrt(omega**2 - gamma**2)
    u = r - center
    e = np.exp(-gamma * dt)
    c, s = np.cos(wd * dt), np.sin(wd * dt)
    a = u
    b = (v + gamma * u) / wd
    u_new = e * (a * c + b * s)
    v_new = e * ((-a * wd * s + b * wd * c)) - gamma * u_new
    return center + u_new, v_new


def step(state, s, dt, cfg):
    """Advance the plant by dt with trap offsets held constant at ``s``.

    Dipole modes rotate about the shifted trap centers; the width mode rotates
    about its curvature-dependent equilibrium at omega_q = sqrt(5/2) omega_x,
    with an optional phenomenological damping rate.  The applied offsets ``s``
    must already include every contribution (scenario events + actuators).
    """
    if dt <= 0:
        raise ValueError("step requires dt > 0")
    wx_sq = cfg.omega_x**2 + s.domega_x_sq
    if wx_sq <= 0:
        raise ValueError(
            f"trap inverted: omega_x^2 + domega_x_sq = {wx_sq:.3e} <= 0 at t={state.t:.4f}"
        )
    omega_x = np.sqrt(wx_sq)
    omega_q = QUADRUPOLE_RATIO * omega_x

    x, vx = _rotate(state.x, state.vx, cfg.x_trap0 + s.dx_trap, omega_x, dt)
    z, vz = _rotate(state.z, state.vz, cfg.z_trap0 + s.dz_trap, cfg.omega_z, dt)
    w, vw = _rotate_damped(
        state.w, state.vw, width_equilibrium(cfg, s.domega_x_sq), omega_q,
        cfg.width_damping, dt,
    )
    return PlantState(x=x, vx=vx, z=z, vz=vz, w=w, vw=vw, trap=state.trap,
                      t=state.t + dt)


def dipole_kick(state, kick):
    """Sudden trap-parameter change; mode coordinates are untouched."""
    return replace(state, trap=state.trap + kick)


def mode_energies(state, cfg, s=None):
    """Per-mode energies about the equilibria implied by offsets ``s``.

    Defaults to the state's own trap offsets (open-loop bookkeeping).  Energy
    is (1/2) m omega^2 (r - r_eq)^2 + (1/2) m v^2 for each mode.
    """
    if s is None:
        s = state.trap
    m = cfg.atom_mass
    wx_sq = cfg.omega_x**2 + s.domega_x_sq
    omega_q_sq = QUADRUPOLE_RATIO**2 * wx_sq
    e_x = 0.5 * m * wx_sq * (state.x - cfg.x_trap0 - s.dx_trap) ** 2 + 0.5 * m * state.vx**2
    e_z = (0.5 * m * cfg.omega_z**2 * (state.z - cfg.z_trap0 - s.dz_trap) ** 2
           + 0.5 * m * state.vz**2)
    e_w = (0.5 * m * omega_q_sq * (state.w - width_equilibrium(cfg, s.domega_x_sq)) ** 2
           + 0.5 * m * state.vw**2)
    return {"x": e_x, "z": e_z, "w": e_w}


def quadrupole_drive(state, amplitude, drive_freq, n_periods, cfg, dt=1e-3):
    """Sinusoidally modulate the trap curvature for a whole number of periods.

    domega_x_sq(t) = amplitude * sin(drive_freq * t) is applied on top of the
    state's trap offsets via repeated exact steps of length ``dt``.  Returns
    the final state and the sampled trajectory.
    """
    if n_periods < 1:
        raise ValueError("need n_periods >= 1")
    if drive_freq <= 0:
        raise ValueError("drive frequency must be positive")
    n_steps = int(round(n_periods * 2 * np.pi / drive_freq / dt))
    t_rel = 0.0
    traj = {"t": [], "w": [], "vw": [], "domega_x_sq": []}
    for _ in range(n_steps):
        mod = amplitude * np.sin(drive_freq * t_rel)
        s = state.trap + SignalVector(0.0, 0.0, mod)
        traj["t"].append(state.t)
        traj["w"].append(state.w)
        traj["vw"].append(state.vw)
        traj["domega_x_sq"].append(mod)
        state = step(state, s, dt, cfg)
        t_rel += dt
    traj = {k: np.array(v) for k, v in traj.items()}
    return state, traj


class DelayLine:
    """FIFO actuator queue realizing the measured loop latency.

    Commands become effective ``delay`` seconds after being pushed; at sample
    boundaries this quantizes the default 960 us latency to exactly one 1 ms
    sample.  ``pop_due`` returns every command due at time t, oldest first.
    """

    def __init__(self, delay=960e-6):
        if delay < 0:
            raise ValueError("delay must be >= 0")
        self.delay = delay
        self._queue = deque()

    def push(self, t, u):
        if self._queue and t + self.delay < self._queue[-1][0] - 1e-12:
            raise ValueError("commands must be pushed in time order")
        self._queue.append((t + self.delay, u))

    def pop_due(self, t, tol=1e-12):
        due = []
        while self._queue and self._queue[0][0] <= t + tol:
            due.append(self._queue.popleft()[1])
        return due

    def __len__(self):
        return len(self._queue)
