"""Wave-equation update kernels, damping sponge, and the source wavelet.

Acoustic: second-order-in-time pressure formulation,

    m * d2u/dt2 = laplacian(u) + sources,   m = 1/c^2,

stepped as u[t] = 2 u[t-1] - u[t-2] + (dt^2 / m) * lap(u[t-1]), followed by a
multiplicative sponge factor 1/(1 + dt*damp).

Elastic: first-order velocity-stress system on a staggered (Virieux) grid,

    rho * dv/dt = div(tau)
    dtau/dt     = lam * tr(grad v) I + mu * (grad v + grad v^T)

with velocities at half-points along their own axis, shear stresses at edge
midpoints, and diagonal stresses on integer points. Both systems treat axes
of extent 1 as absent.

Update regions are half-open boxes in interior coordinates; the per-point
arithmetic is independent of how the interior is partitioned into boxes,
which is what makes blocked and wavefront schedules bit-comparable with the
naive sweep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    Box,
    FdCoefficients,
    GridSpec,
    TimeBufferedField,
    allocate_field,
    box_is_empty,
    box_slices,
    check_region,
    fd_weights,
    staggered_fd_weights,
)


@dataclass
class Wavelet:
    """Per-time-step source amplitudes with their generating parameters."""

    f0: float
    t0: float
    samples: np.ndarray


def ricker(f0: float, t0: float, dt: float, nt: int, amplitude: float = 1.0) -> Wavelet:
    """Ricker wavelet: amplitude * (1 - 2a) * exp(-a), a = (pi f0 (t - t0))^2."""
    if f0 <= 0.0:
        raise ValueError(f"f0 must be > 0, got {f0}")
    if nt < 1:
        raise ValueError(f"nt must be >= 1, got {nt}")
    t = np.arange(nt, dtype=np.float64) * dt - t0
    a = (np.pi * f0 * t) ** 2
    samples = amplitude * (1.0 - 2.0 * a) * np.exp(-a)
    return Wavelet(f0=f0, t0=t0, samples=samples)


def build_damping(grid: GridSpec, decay_max: float) -> np.ndarray:
    """Sponge profile (1/s): zero in the interior, squared-cosine taper rising
    to decay_max at the outermost points of each boundary layer.

    Multi-axis overlap (edges/corners) takes the per-axis maximum so the
    outermost value stays exactly decay_max.
    """
    damp = np.zeros(grid.shape, dtype=np.float64)
    layers = grid.boundary_layers
    if layers == 0:
        return damp
    for a in grid.active_axes:
        n = grid.shape[a]
        idx = np.arange(n, dtype=np.float64)
        dist = np.minimum(idx, n - 1 - idx)
        profile = np.where(
            dist < layers,
            decay_max * np.cos(np.pi * dist / (2.0 * layers)) ** 2,
            0.0,
        )
        shape = [1, 1, 1]
        shape[a] = n
        np.maximum(damp, profile.reshape(shape), out=damp)
    return damp


def _pad_material(values, grid: GridSpec, halo: int, dtype):
    """Edge-pad an interior material array into halo-padded layout.

    Scalars pass through as python floats so elementwise kernels stay in the
    field dtype without an extra full-array pass.
    """
    if np.isscalar(values) or np.ndim(values) == 0:
        return float(values)
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != grid.shape:
        raise ValueError(f"material shape {arr.shape} != grid shape {grid.shape}")
    padded = np.pad(arr, halo, mode="edge")
    return padded.astype(dtype)


def _damp_factor(damp, grid: GridSpec, halo: int, dt: float, dtype):
    """Per-point multiplicative sponge factor 1/(1 + dt*damp), halo-padded."""
    if damp is None:
        return None
    arr = np.asarray(damp, dtype=np.float64)
    if not np.any(arr):
        return None
    factor = 1.0 / (1.0 + dt * np.pad(arr, halo, mode="edge"))
    return factor.astype(dtype)


def _shifted(box: Box, halo: int, axis: int, offset: int):
    shift = [0, 0, 0]
    shift[axis] = offset
    return box_slices(box, halo, tuple(shift))


class AcousticModel:
    """Pressure field plus material/damping state and folded coefficients.

    ``m`` is squared slowness (1/c^2); scalars are accepted for homogeneous
    media and kept scalar to avoid full-array passes.
    """

    group_names = ("u",)

    def __init__(self, grid: GridSpec, space_order: int, m, dt: float,
                 damp=None, dtype=np.float32):
        self.grid = grid
        self.space_order = int(space_order)
        self.dt = float(dt)
        self.dtype = np.dtype(dtype)
        self.coeffs = fd_weights(space_order)
        self.u = allocate_field(grid, space_order, time_levels=3, dtype=dtype)
        halo = self.u.halo

        if np.isscalar(m) or np.ndim(m) == 0:
            if float(m) <= 0.0:
                raise ValueError("m must be positive")
            self._inv_m_dt2 = self.dt**2 / float(m)
        else:
            m_arr = np.asarray(m, dtype=np.float64)
            if np.any(m_arr <= 0.0):
                raise ValueError("m must be positive everywhere")
            self._inv_m_dt2 = _pad_material(self.dt**2 / m_arr, grid, halo, self.dtype)
        self.m = m
        self.damp = damp
        self._dampfac = _damp_factor(damp, grid, halo, self.dt, self.dtype)

        # Laplacian terms (axis, offset r, w_r / h_a^2) in a fixed order;
        # the shared center coefficient collapses into one scalar.
        w = self.coeffs.weights
        self._center = float(sum(w[0] / grid.spacing[a] ** 2 for a in grid.active_axes))
        self._lap_terms = [
            (a, r, float(w[r] / grid.spacing[a] ** 2))
            for a in grid.active_axes
            for r in range(1, self.coeffs.radius + 1)
        ]

    @property
    def fields(self) -> dict[str, TimeBufferedField]:
        return {"u": self.u}

    def group_fields(self, group: str) -> list[TimeBufferedField]:
        if group != "u":
            raise KeyError(group)
        return [self.u]

    def m_at_index(self, idx) -> float:
        if np.isscalar(self.m) or np.ndim(self.m) == 0:
            return float(self.m)
        return float(np.asarray(self.m)[tuple(idx)])


def acoustic_update(model: AcousticModel, coeffs: FdCoefficients, t: int,
                    region: Box) -> None:
    """Leapfrog pressure update over ``region`` writing level t.

    Reads levels t-1 and t-2; halo points are never written.
    """
    if coeffs.space_order != model.space_order:
        raise ValueError("coefficient order does not match the model")
    box = check_region(region, model.grid)
    if box_is_empty(box):
        return
    f = model.u
    halo = f.halo
    dst = f.level(t)
    u1 = f.level(t - 1)
    u0 = f.level(t - 2)
    sl = box_slices(box, halo)

    u1c = u1[sl]
    lap = u1c * model._center
    for a, r, w in model._lap_terms:
        term = u1[_shifted(box, halo, a, r)] + u1[_shifted(box, halo, a, -r)]
        term *= w
        lap += term

    inv = model._inv_m_dt2
    lap *= inv[sl] if isinstance(inv, np.ndarray) else inv
    out = u1c * 2.0
    out -= u0[sl]
    out += lap
    if model._dampfac is not None:
        out *= model._dampfac[sl]
    dst[sl] = out


class ElasticModel:
    """Velocity-stress state: 3 velocity and 6 stress fields, 2 levels each.

    lam/mu in Pa, rho in kg/m^3; scalars or interior-shaped arrays. Material
    values are sampled at the nominal integer points (no half-point
    averaging), which is exact for homogeneous media.
    """

    group_names = ("v", "tau")
    v_names = ("vx", "vy", "vz")
    tau_names = ("txx", "tyy", "tzz", "txy", "txz", "tyz")

    def __init__(self, grid: GridSpec, space_order: int, lam, mu, rho,
                 dt: float, damp=None, dtype=np.float32):
        self.grid = grid
        self.space_order = int(space_order)
        self.dt = float(dt)
        self.dtype = np.dtype(dtype)
        self.coeffs = fd_weights(space_order)

        def scalar_ok(x, name, positive):
            vals = np.asarray(x, dtype=np.float64)
            if positive and np.any(vals <= 0.0):
                raise ValueError(f"{name} must be positive")
            if not positive and np.any(vals < 0.0):
                raise ValueError(f"{name} must be non-negative")

        scalar_ok(rho, "rho", positive=True)
        scalar_ok(mu, "mu", positive=False)
        lp2m = np.asarray(lam, dtype=np.float64) + 2.0 * np.asarray(mu, dtype=np.float64)
        if np.any(lp2m <= 0.0):
            raise ValueError("lam + 2*mu must be positive")

        make = lambda: allocate_field(grid, space_order, time_levels=2, dtype=dtype)
        self.v = {name: make() for name in self.v_names}
        self.tau = {name: make() for name in self.tau_names}
        halo = self.v["vx"].halo

        self._buoy_dt = _scale_or_pad(dt / np.asarray(rho, dtype=np.float64), grid, halo, self.dtype)
        self._lam_dt = _scale_or_pad(dt * np.asarray(lam, dtype=np.float64), grid, halo, self.dtype)
        self._mu_dt = _scale_or_pad(dt * np.asarray(mu, dtype=np.float64), grid, halo, self.dtype)
        self._mu2_dt = _scale_or_pad(2.0 * dt * np.asarray(mu, dtype=np.float64), grid, halo, self.dtype)
        self.lam, self.mu, self.rho, self.damp = lam, mu, rho, damp
        self._dampfac = _damp_factor(damp, grid, halo, self.dt, self.dtype)

        w = staggered_fd_weights(space_order)
        # Per-axis weights folded with 1/h; inactive axes contribute nothing.
        self._d1 = {
            a: [float(c / grid.spacing[a]) for c in w] for a in grid.active_axes
        }

    @property
    def fields(self) -> dict[str, TimeBufferedField]:
        out = dict(self.v)
        out.update(self.tau)
        return out

    def group_fields(self, group: str) -> list[TimeBufferedField]:
        if group == "v":
            return [self.v[n] for n in self.v_names]
        if group == "tau":
            return [self.tau[n] for n in self.tau_names]
        raise KeyError(group)


def _scale_or_pad(values, grid, halo, dtype):
    if np.ndim(values) == 0:
        return float(values)
    return _pad_material(values, grid, halo, dtype)


def _stag_d(arr: np.ndarray, box: Box, halo: int, axis: int, weights,
            forward: bool):
    """Staggered first derivative along ``axis`` over ``box``.

    forward=True reads offsets +j / -(j-1) (result at the +1/2 point of the
    source layout); forward=False reads +(j-1) / -j. Returns None for
    inactive axes.
    """
    if weights is None:
        return None
    acc = None
    for j, c in enumerate(weights, start=1):
        if forward:
            hi, lo = j, -(j - 1)
        else:
            hi, lo = j - 1, -j
        term = arr[_shifted(box, halo, axis, hi)] - arr[_shifted(box, halo, axis, lo)]
        term *= c
        acc = term if acc is None else _iadd(acc, term)
    return acc


def _iadd(acc, term):
    acc += term
    return acc


def _acc_sum(parts):
    """Sum of non-None arrays in fixed order; None when all absent."""
    acc = None
    for p in parts:
        if p is None:
            continue
        acc = p if acc is None else _iadd(acc, p)
    return acc


def _combine(prev, incr, scale, sl, dampfac):
    out = prev[sl].copy()
    if incr is not None:
        incr *= scale[sl] if isinstance(scale, np.ndarray) else scale
        out += incr
    if dampfac is not None:
        out *= dampfac[sl]
    return out


def elastic_update_v(model: ElasticModel, coeffs: FdCoefficients, t: int,
                     region: Box) -> None:
    """Velocity half of the leapfrog: v[t] = v[t-1] + dt/rho * div(tau[t-1])."""
    if coeffs.space_order != model.space_order:
        raise ValueError("coefficient order does not match the model")
    box = check_region(region, model.grid)
    if box_is_empty(box):
        return
    halo = model.v["vx"].halo
    sl = box_slices(box, halo)
    d1 = model._d1
    w = lambda a: d1.get(a)
    tau = {name: f.level(t - 1) for name, f in model.tau.items()}

    div_x = _acc_sum([
        _stag_d(tau["txx"], box, halo, 0, w(0), forward=True),
        _stag_d(tau["txy"], box, halo, 1, w(1), forward=False),
        _stag_d(tau["txz"], box, halo, 2, w(2), forward=False),
    ])
    div_y = _acc_sum([
        _stag_d(tau["txy"], box, halo, 0, w(0), forward=False),
        _stag_d(tau["tyy"], box, halo, 1, w(1), forward=True),
        _stag_d(tau["tyz"], box, halo, 2, w(2), forward=False),
    ])
    div_z = _acc_sum([
        _stag_d(tau["txz"], box, halo, 0, w(0), forward=False),
        _stag_d(tau["tyz"], box, halo, 1, w(1), forward=False),
        _stag_d(tau["tzz"], box, halo, 2, w(2), forward=True),
    ])

    df = model._dampfac
    buoy = model._buoy_dt
    for name, incr in (("vx", div_x), ("vy", div_y), ("vz", div_z)):
        f = model.v[name]
        f.level(t)[sl] = _combine(f.level(t - 1), incr, buoy, sl, df)


def elastic_update_tau(model: ElasticModel, coeffs: FdCoefficients, t: int,
                       region: Box) -> None:
    """Stress half: tau[t] = tau[t-1] + dt*(lam tr(grad v[t]) I + mu (grad v[t] + grad v[t]^T)).

    Reads the velocity at the same step t, so v must be updated first over a
    region at least ``radius`` wider along active axes.
    """
    if coeffs.space_order != model.space_order:
        raise ValueError("coefficient order does not match the model")
    box = check_region(region, model.grid)
    if box_is_empty(box):
        return
    halo = model.v["vx"].halo
    sl = box_slices(box, halo)
    d1 = model._d1
    w = lambda a: d1.get(a)
    v = {name: f.level(t) for name, f in model.v.items()}

    dxvx = _stag_d(v["vx"], box, halo, 0, w(0), forward=False)
    dyvy = _stag_d(v["vy"], box, halo, 1, w(1), forward=False)
    dzvz = _stag_d(v["vz"], box, halo, 2, w(2), forward=False)
    trace = _acc_sum([
        None if dxvx is None else dxvx.copy(),
        dyvy, dzvz,
    ])  # dyvy/dzvz are only read once more each below, dxvx twice

    lam_dt = model._lam_dt
    df = model._dampfac

    def lam_trace():
        if trace is None:
            return None
        t2 = trace * (lam_dt[sl] if isinstance(lam_dt, np.ndarray) else lam_dt)
        return t2

    for name, diag in (("txx", dxvx), ("tyy", dyvy), ("tzz", dzvz)):
        f = model.tau[name]
        incr = lam_trace()
        if diag is not None:
            d2 = diag * (model._mu2_dt[sl] if isinstance(model._mu2_dt, np.ndarray) else model._mu2_dt)
            incr = d2 if incr is None else _iadd(incr, d2)
        out = f.level(t - 1)[sl].copy()
        if incr is not None:
            out += incr
        if df is not None:
            out *= df[sl]
        f.level(t)[sl] = out

    for name, (a1, f1, a2, f2) in (
        ("txy", (1, "vx", 0, "vy")),
        ("txz", (2, "vx", 0, "vz")),
        ("tyz", (2, "vy", 1, "vz")),
    ):
        strain = _acc_sum([
            _stag_d(v[f1], box, halo, a1, w(a1), forward=True),
            _stag_d(v[f2], box, halo, a2, w(a2), forward=True),
        ])
        f = model.tau[name]
        f.level(t)[sl] = _combine(f.level(t - 1), strain, model._mu_dt, sl, df)
