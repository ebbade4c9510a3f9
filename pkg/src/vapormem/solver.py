"""
Maxwell-Bloch integrator for the four-level Lambda memory.

Comoving-frame equations, one transverse ring, any number of velocity
classes sharing the signal field::

    dE/dz   = i g sum_v w_v (c1 P1_v + c2 P2_v)
    dP_j/dt = -[gamma + i(Delta_j + delta_v)] P_j + i c_j g E + i b_j Omega/2 S
    dS/dt   = -[gamma_s + i(Delta_tp + f delta_v)] S + i sum_j b_j Omega*/2 P_j

with g = sqrt(d gamma / (2 L)), so a resonant two-level medium transmits
exp(-d) of the intensity.  z is discretised on Chebyshev-Gauss-Lobatto points
and the field is slaved to the atoms.  Time stepping is IMEX: the diagonal
damping/detuning terms are handled with the trapezoidal rule, the couplings
with a Heun predictor-corrector.

The map (input field, initial state) -> state is linear, so the module also
provides the exact transpose of one step (:meth:`Medium.adjoint_step`), which
ensemble code uses to obtain storage kernels.
"""

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DomainError, NumericalInstabilityError


def chebyshev_diff_matrix(n_z, cell_length):
    """First-derivative collocation matrix on ``n_z`` Chebyshev-Gauss-Lobatto
    points mapped to [0, cell_length].

    Returns ``(D, z)`` with ``z[0] = 0`` and ``z[-1] = cell_length``.
    """
    if n_z < 2:
        raise DomainError("n_z must be >= 2")
    n = n_z - 1
    k = np.arange(n_z)
    x = np.cos(np.pi * k / n)
    c = np.ones(n_z)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** k
    dx = x[:, None] - x[None, :]
    d = np.outer(c, 1.0 / c) / (dx + np.eye(n_z))
    d -= np.diag(d.sum(axis=1))
    z = 0.5 * cell_length * (1.0 - x)
    return d * (-2.0 / cell_length), z


def clenshaw_curtis_weights(n_z, cell_length):
    """Quadrature weights on the nodes of :func:`chebyshev_diff_matrix`."""
    n = n_z - 1
    theta = np.pi * np.arange(n_z) / n
    w = np.zeros(n_z)
    v = np.ones(n - 1)
    inner = slice(1, n)
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n * n - 1)
        for k in range(1, n // 2):
            v -= 2 * np.cos(2 * k * theta[inner]) / (4 * k * k - 1)
        v -= np.cos(n * theta[inner]) / (n * n - 1)
    else:
        w[0] = w[n] = 1.0 / (n * n)
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2 * np.cos(2 * k * theta[inner]) / (4 * k * k - 1)
    w[inner] = 2 * v / n
    return w * (cell_length / 2)


def coupling_constant(optical_depth, gamma, cell_length):
    """g such that a resonant two-level medium has intensity transmission exp(-d)."""
    return math.sqrt(optical_depth * gamma / (2 * cell_length))


class Medium:
    """Discretised medium for one ring: precomputed operators for the stepper.

    Arrays of the state have shape ``(3, B, V, Z)``: components (P1, P2, S),
    batch members, velocity classes, collocation points.
    """

    def __init__(self, scheme, config, shifts=(0.0,), weights=(1.0,), dt=None):
        self.scheme = scheme
        self.config = config
        self.dt = float(config.dt if dt is None else dt)
        self.shifts = np.asarray(shifts, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        if self.shifts.shape != self.weights.shape:
            raise ConfigurationError("velocity shifts and weights differ in length")
        n_z = config.n_z
        self.n_z = n_z
        self.n_v = self.shifts.size
        d_mat, self.z = chebyshev_diff_matrix(n_z, config.cell_length)
        self.quad = clenshaw_curtis_weights(n_z, config.cell_length)

        g = coupling_constant(config.effective_optical_depth(scheme.gamma), scheme.gamma,
                              config.cell_length)
        self.g = g
        a = d_mat.copy()
        a[0, :] = 0.0
        a[0, 0] = 1.0
        m = np.linalg.inv(a)
        # E = u * 1 + (s[1:] @ K); column 0 of inv(a) is exactly the ones vector
        self.k_field = np.ascontiguousarray((1j * g * m[:, 1:]).T)

        c1, c2 = scheme.coupling_signal
        b1, b2 = scheme.coupling_control
        self.c = (c1, c2)
        self.b = (b1, b2)
        self.wc1 = self.weights * c1
        self.wc2 = self.weights * c2
        self.icg = (1j * c1 * g, 1j * c2 * g)

        d1, d2 = scheme.excited_detunings
        f = config.twophoton_doppler_fraction
        lam = np.empty((3, 1, self.n_v, 1), dtype=complex)
        lam[0, 0, :, 0] = scheme.gamma + 1j * (d1 + self.shifts)
        lam[1, 0, :, 0] = scheme.gamma + 1j * (d2 + self.shifts)
        lam[2, 0, :, 0] = scheme.gamma_spin + 1j * (scheme.delta_twophoton + f * self.shifts)
        self.lam = lam
        h = 0.5 * self.dt
        self.dp = 1.0 / (1.0 + h * lam)
        self.dm = 1.0 - h * lam
        self.loss = (2 * lam.real)[:, 0, :, 0] * self.weights  # (3, V)

    def zeros(self, batch):
        return np.zeros((3, batch, self.n_v, self.n_z), dtype=complex)

    def field(self, y, u):
        s = self.wc1 @ y[0] + self.wc2 @ y[1]
        e = s[:, 1:] @ self.k_field
        e += u[:, None]
        return e

    def coupling(self, y, omega, u):
        """Coupling terms of the time derivative, and the slaved field."""
        e = self.field(y, u)
        om = omega[:, None, None]
        b1, b2 = self.b
        out = np.empty_like(y)
        ie = e[:, None, :]
        sp = (0.5j * om) * y[2]
        out[0] = self.icg[0] * ie + b1 * sp
        out[1] = self.icg[1] * ie + b2 * sp
        out[2] = (0.5j * np.conj(om)) * (b1 * y[0] + b2 * y[1])
        return out, e

    def coupling_transpose(self, lam, omega):
        """Transpose of ``coupling`` (bilinear pairing, no conjugation).

        Returns the cotangent of the state and of the boundary input.
        """
        om = omega[:, None, None]
        b1, b2 = self.b
        eps = self.icg[0] * lam[0].sum(axis=1) + self.icg[1] * lam[1].sum(axis=1)
        du = eps.sum(axis=-1)
        sig = np.zeros_like(eps)
        sig[:, 1:] = eps @ self.k_field.T
        sig = sig[:, None, :]
        out = np.empty_like(lam)
        sc = (0.5j * np.conj(om)) * lam[2]
        out[0] = self.wc1[:, None] * sig + b1 * sc
        out[1] = self.wc2[:, None] * sig + b2 * sc
        out[2] = (0.5j * om) * (b1 * lam[0] + b2 * lam[1])
        return out, du

    def step(self, y, omega0, omega1, u0, u1):
        """Advance ``y`` by one time step.  Returns (y_next, field at start)."""
        dt = self.dt
        c0, e0 = self.coupling(y, omega0, u0)
        dmy = self.dm * y
        ys = self.dp * (dmy + dt * c0)
        c1, _ = self.coupling(ys, omega1, u1)
        c0 += c1
        c0 *= 0.5 * dt
        c0 += dmy
        c0 *= self.dp
        return c0, e0

    def adjoint_step(self, lam, omega0, omega1):
        """Transpose of :meth:`step`: cotangents of (y, u0, u1)."""
        dt = self.dt
        a = self.dp * lam
        kappa, du1 = self.coupling_transpose(0.5 * dt * a, omega1)
        b = self.dp * kappa
        zeta = 0.5 * dt * a + dt * b
        rho, du0 = self.coupling_transpose(zeta, omega0)
        a += b
        a *= self.dm
        a += rho
        return a, du0, du1

    def absorption_rate(self, y):
        """Energy decay rate sum_v w_v int 2 Re(lambda) |y|^2 dz, per member."""
        dens = (y.real ** 2 + y.imag ** 2) @ self.quad  # (3, B, V)
        return np.einsum("cbv,cv->b", dens, self.loss)

    def class_energy(self, y, component):
        """sum_v w_v int |y_component|^2 dz per batch member."""
        comp = y[component]
        dens = (comp.real ** 2 + comp.imag ** 2) @ self.quad
        return dens @ self.weights


def _kernel_args(medium):
    return (medium.dp[:, 0, :, 0].copy(), medium.dm[:, 0, :, 0].copy(), medium.dt,
            medium.wc1, medium.wc2, medium.icg[0], medium.icg[1],
            complex(medium.b[0]), complex(medium.b[1]), medium.k_field)


def integrate(medium, y0, omega, u, track_energy=False, stage="stage"):
    """Integrate over the time samples of ``omega``/``u`` (shape (B, n_t)).

    ``y0`` has shape (3, B, V, Z).  Returns ``(y_end, out_field, absorbed)``:
    the final state, the field at z = L for every sample, and (if tracked)
    the trapezoid-integrated energy lost to atomic damping per member.
    """
    dp, dm, dt, wc1, wc2, icg1, icg2, b1, b2, kf = _kernel_args(medium)
    y_end, out, absorbed, bad = _kernels.forward(
        np.ascontiguousarray(np.moveaxis(y0, 1, 0), dtype=complex),
        np.ascontiguousarray(omega, dtype=complex),
        np.ascontiguousarray(u, dtype=complex),
        dp, dm, dt, wc1, wc2, icg1, icg2, b1, b2, kf,
        np.ascontiguousarray(medium.loss), medium.quad, bool(track_energy))
    if bad >= 0 or not np.isfinite(y_end).all():
        step_index = int(bad) if bad >= 0 else omega.shape[1] - 1
        members = np.flatnonzero(~np.isfinite(out).all(axis=1) | ~np.isfinite(y_end).all(axis=(1, 2, 3)))
        err = NumericalInstabilityError(
            f"non-finite field in {stage} at step {step_index}", step=step_index, stage=stage)
        err.members = members.tolist()
        raise err
    return np.moveaxis(y_end, 0, 1), out, absorbed


def integrate_adjoint(medium, lam_end, omega, source=None):
    """Backward pass for the linear functionals

        J = <lam_end, y_N> + sum_n source[:, n] * E(L, t_n)

    (bilinear pairing).  ``lam_end`` has shape (3, B, V, Z).  Returns the
    sensitivity of J to every boundary input sample, shape (B, n_t), and the
    cotangent of the initial state, shape (3, B, V, Z).
    """
    if source is None:
        source = np.zeros(omega.shape, dtype=complex)
    dp, dm, dt, wc1, wc2, icg1, icg2, b1, b2, kf = _kernel_args(medium)
    h, lam0 = _kernels.adjoint(
        np.ascontiguousarray(np.moveaxis(lam_end, 1, 0), dtype=complex),
        np.ascontiguousarray(omega, dtype=complex),
        np.ascontiguousarray(source, dtype=complex),
        dp, dm, dt, wc1, wc2, icg1, icg2, b1, b2, kf)
    return h, np.moveaxis(lam0, 0, 1)


def trapezoid_weights(n_t, dt):
    w = np.full(n_t, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


@dataclass(eq=False)
class FieldState:
    """Signal field and atomic coherences of one velocity class on the z grid."""
    e_field: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    spin: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        n = len(self.e_field)
        if not (len(self.p1) == len(self.p2) == len(self.spin) == n):
            raise ConfigurationError("FieldState arrays must share length n_z")

    @classmethod
    def empty(cls, n_z, t=0.0):
        z = np.zeros(n_z, dtype=complex)
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), t)


@functools.lru_cache(maxsize=32)
def _single_class_medium(scheme, config, doppler_shift, dt):
    return Medium(scheme, config, (doppler_shift,), (1.0,), dt=dt)


def _value_at(x, t):
    return complex(x(t)) if callable(x) else complex(x)


def step(state, scheme, config, control_amp, doppler_shift, input_boundary, dt=None):
    """Advance a single-class :class:`FieldState` by one time step.

    ``control_amp`` and ``input_boundary`` are constants or callables of time
    (evaluated at the start and end of the step).
    """
    dt = float(config.dt if dt is None else dt)
    if not dt > 0:
        raise DomainError("dt must be positive")
    medium = _single_class_medium(scheme, config, float(doppler_shift), dt)
    t0, t1 = state.t, state.t + dt
    om = np.array([[_value_at(control_amp, t0), _value_at(control_amp, t1)]])
    u = np.array([[_value_at(input_boundary, t0), _value_at(input_boundary, t1)]])
    y = np.stack([state.p1, state.p2, state.spin]).astype(complex)[:, None, None, :]
    y, _ = medium.step(y, om[:, 0], om[:, 1], u[:, 0], u[:, 1])
    if not np.isfinite(y).all():
        raise NumericalInstabilityError("non-finite state after step", step=0, stage="step")
    e = medium.field(y, u[:, 1])[0]
    return FieldState(e, y[0, 0, 0].copy(), y[1, 0, 0].copy(), y[2, 0, 0].copy(), t1)


@dataclass(eq=False)
class MemoryRunResult:
    """Outcome of one storage/hold/retrieval sequence.

    Efficiencies are fractions of the input photon energy.  Traces hold the
    output flux |E(L, t)|^2 on the stage time grids (ns).
    """
    eta_storage: float
    eta_internal: float
    eta_leak: float
    leakage_time: np.ndarray
    leakage_trace: np.ndarray
    retrieval_time: np.ndarray
    retrieval_trace: np.ndarray
    z: np.ndarray
    spin_profile: np.ndarray
    absorbed_readin: float = 0.0
    residual_polarization: float = 0.0
    absorbed_readout: float = 0.0
    remaining_spin: float = 0.0
    hold_factor: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def readin_balance(self):
        """Leaked + stored + residual coherence + absorbed; 1 for exact bookkeeping."""
        return self.eta_leak + self.eta_storage + self.residual_polarization + self.absorbed_readin

    @property
    def energy_balance(self):
        """Input energy accounted for after both stages (ideally 1)."""
        lost_in_hold = self.eta_storage - self.eta_storage_after_hold
        return (self.eta_leak + self.residual_polarization + self.absorbed_readin
                + lost_in_hold + self.eta_internal + self.absorbed_readout + self.remaining_spin)

    @property
    def eta_storage_after_hold(self):
        return self.meta.get("stored_after_hold", self.eta_storage * self.hold_factor)

    def summary_row(self):
        return {
            "eta_internal": self.eta_internal,
            "eta_storage": self.eta_storage,
            "eta_leak": self.eta_leak,
        }


def write_trace_csv(path, t, flux):
    """CSV with columns ``t_ns,out_flux``."""
    with open(path, "w") as fh:
        fh.write("t_ns,out_flux\n")
        for ti, fi in zip(t, flux):
            fh.write(f"{ti:.6f},{fi:.12e}\n")


def write_spin_csv(path, z, spin):
    """CSV with columns ``z_mm,re,im``."""
    with open(path, "w") as fh:
        fh.write("z_mm,re,im\n")
        for zi, si in zip(z, spin):
            fh.write(f"{zi:.9f},{si.real:.12e},{si.imag:.12e}\n")


def stage_grid(t0, t1, dt):
    n = int(math.ceil((t1 - t0) / dt - 1e-9)) + 1
    return t0 + dt * np.arange(n)


def readin_window(signal, control):
    lo = min(signal.center - signal.half_extent(), control.center - control.half_extent())
    hi = max(signal.center + signal.half_extent(), control.center + control.half_extent())
    return lo, hi


def readout_window(signal, control):
    return (control.center - control.half_extent(),
            control.center + control.half_extent() + signal.half_extent())


def _check_window(window, pulses, stage):
    lo, hi = window
    for p in pulses:
        if p.center - 4 * p.fwhm < lo or p.center + 4 * p.fwhm > hi:
            raise ConfigurationError(
                f"{stage} window [{lo}, {hi}] ns does not contain the pulse at "
                f"{p.center} ns with 4 x FWHM margins")


def average_spin(spin, weights):
    """Class-weighted spin wave; ``spin`` has shape (..., V, Z)."""
    return np.einsum("...vz,v->...z", spin, weights)


def run_batch(scheme, config, signal, control_in, control_out, storage_time,
              shifts=(0.0,), weights=(1.0,), scales=(1.0,), rethermalize=None,
              readin=None, readout=None):
    """Run the protocol for several control-amplitude scales at once.

    Each scale is an independent ring.  ``rethermalize(spin, weights)`` maps
    the (V, Z) class-resolved spin wave of one ring to the post-hold one;
    ``None`` keeps velocities frozen.
    """
    if storage_time < 0:
        raise ConfigurationError("storage_time must be >= 0")
    readin = readin or readin_window(signal, control_in)
    readout = readout or readout_window(signal, control_out)
    _check_window(readin, (signal, control_in), "read-in")
    _check_window(readout, (control_out,), "read-out")

    medium = Medium(scheme, config, shifts, weights)
    scales = np.asarray(scales, dtype=float)
    batch = scales.size
    dt = medium.dt

    t_in = stage_grid(*readin, dt)
    u_in = np.broadcast_to(signal.photon_amplitude(t_in).astype(complex), (batch, t_in.size))
    om_in = scales[:, None] * control_in.envelope(t_in)[None, :]
    tw_in = trapezoid_weights(t_in.size, dt)
    e_in = float(tw_in @ np.abs(u_in[0]) ** 2)

    y, out_in, absorbed_in = integrate(medium, medium.zeros(batch), om_in, u_in,
                                       track_energy=True, stage="read-in")
    flux_in = np.abs(out_in) ** 2
    eta_leak = flux_in @ tw_in / e_in
    eta_storage = medium.class_energy(y, 2) / e_in
    residual = (medium.class_energy(y, 0) + medium.class_energy(y, 1)) / e_in
    spin = y[2]
    spin_mean = average_spin(spin, medium.weights)

    # hold: coherences decay completely; stored energy decays as exp(-T/tau)
    hold_factor = math.exp(-storage_time / config.memory_lifetime)
    if rethermalize is not None:
        spin = np.stack([rethermalize(s, medium.weights) for s in spin])
    y_out = medium.zeros(batch)
    y_out[2] = math.sqrt(hold_factor) * spin
    stored_after = medium.class_energy(y_out, 2) / e_in

    t_out = stage_grid(*readout, dt)
    om_out = scales[:, None] * control_out.envelope(t_out)[None, :]
    u_out = np.zeros((batch, t_out.size), dtype=complex)
    y_end, out_out, absorbed_out = integrate(medium, y_out, om_out, u_out,
                                             track_energy=True, stage="read-out")
    tw_out = trapezoid_weights(t_out.size, dt)
    flux_out = np.abs(out_out) ** 2
    eta_int = flux_out @ tw_out / e_in
    remaining = (medium.class_energy(y_end, 0) + medium.class_energy(y_end, 1)
                 + medium.class_energy(y_end, 2)) / e_in

    results = []
    for i in range(batch):
        results.append(MemoryRunResult(
            eta_storage=float(eta_storage[i]),
            eta_internal=float(eta_int[i]),
            eta_leak=float(eta_leak[i]),
            leakage_time=t_in,
            leakage_trace=flux_in[i] / e_in,
            retrieval_time=t_out,
            retrieval_trace=flux_out[i] / e_in,
            z=medium.z,
            spin_profile=spin_mean[i],
            absorbed_readin=float(absorbed_in[i] / e_in),
            residual_polarization=float(residual[i]),
            absorbed_readout=float(absorbed_out[i] / e_in),
            remaining_spin=float(remaining[i]),
            hold_factor=hold_factor,
            meta={"stored_after_hold": float(stored_after[i]), "control_scale": float(scales[i])},
        ))
    return results


def run_protocol(scheme, config, signal, control_in, control_out, storage_time,
                 velocity_grid=None, control_scale=1.0, rethermalize=None,
                 readin=None, readout=None):
    """Read-in, hold for ``storage_time`` ns, forward read-out.

    With no ``velocity_grid`` a single zero-shift class is used.
    """
    shifts, weights = (0.0,), (1.0,)
    if velocity_grid is not None:
        shifts, weights = velocity_grid.shifts, velocity_grid.weights
    return run_batch(scheme, config, signal, control_in, control_out, storage_time,
                     shifts, weights, (control_scale,), rethermalize, readin, readout)[0]
