"""Grid Hilbert spaces, quantum states, and the Gaussian collapse primitives.

Conventions used throughout the package:

* hbar = 1.
* A configuration of N particles in d dimensions lives on a periodic grid with
  L points per axis and spacing ``a``.  Amplitude arrays have shape
  ``(L,) * (N * d)``; particle ``i`` owns axes ``i*d .. i*d + d - 1``.
* State vectors are stored with unit *vector* norm, ``sum |psi|^2 == 1``.  The
  continuum density is ``|psi|^2 / a^(N d)``.
* The discrete Gaussian ``g`` is a density (units 1/length^d) normalised so
  that ``sum_x g(x) a^d == 1`` on the grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import BadArgument, BadPartition, CapExceeded, ZeroWeight

HBAR = 1.0
PURE_CAP = 2**20
MIXED_CAP = 2**12
EIG_CAP = 4096

# Reference values of the collapse constants; for display and unit conversion only.
PHYSICAL_DEFAULTS = {"lambda_per_second": 1e-16, "sigma_metres": 1e-7}

_GAUSS_TAIL = 1e-14


@dataclass(frozen=True)
class GridSpec:
    n_particles: int
    dims: int
    points_per_dim: int
    spacing: float
    masses: tuple
    charges: tuple | None = None
    periodic: bool = True

    def __post_init__(self):
        if self.n_particles < 1 or self.dims not in (1, 2, 3) or self.points_per_dim < 1:
            raise BadArgument("n_particles >= 1, dims in {1,2,3}, points_per_dim >= 1 required")
        if not self.spacing > 0:
            raise BadArgument(f"spacing must be positive, got {self.spacing}")
        if len(self.masses) != self.n_particles or any(not m > 0 for m in self.masses):
            raise BadArgument("need one strictly positive mass per particle")
        if self.charges is not None and len(self.charges) != self.n_particles:
            raise BadArgument("need one charge per particle")
        if not self.periodic:
            raise BadArgument("only periodic grids are supported")

    @property
    def n_axes(self) -> int:
        return self.n_particles * self.dims

    @property
    def shape(self) -> tuple:
        return (self.points_per_dim,) * self.n_axes

    @property
    def dim(self) -> int:
        return self.points_per_dim**self.n_axes

    @property
    def box(self) -> float:
        return self.points_per_dim * self.spacing

    @property
    def site_shape(self) -> tuple:
        """Shape of the single-particle grid."""
        return (self.points_per_dim,) * self.dims

    @property
    def n_sites(self) -> int:
        return self.points_per_dim**self.dims

    @property
    def cell_volume(self) -> float:
        """Single-particle cell volume a^d."""
        return self.spacing**self.dims

    def particle_axes(self, i: int) -> tuple:
        return tuple(range(i * self.dims, (i + 1) * self.dims))

    def coords(self) -> np.ndarray:
        return np.arange(self.points_per_dim) * self.spacing

    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.points_per_dim, d=self.spacing)

    def config_indices(self) -> np.ndarray:
        """(dim, n_axes) table of grid indices for every configuration, C order."""
        return np.indices(self.shape).reshape(self.n_axes, -1).T

    def sub_grid(self, particles) -> "GridSpec":
        particles = list(particles)
        charges = None if self.charges is None else tuple(self.charges[i] for i in particles)
        return GridSpec(len(particles), self.dims, self.points_per_dim, self.spacing,
                        tuple(self.masses[i] for i in particles), charges)


def build_grid(n_particles, dims, points_per_dim, spacing, masses, charges=None,
               mixed=False, pure_cap=PURE_CAP, mixed_cap=MIXED_CAP) -> GridSpec:
    """Validated grid; ``mixed=True`` applies the density-matrix cap to the pure dimension."""
    if isinstance(masses, (int, float)):
        masses = [masses] * n_particles
    grid = GridSpec(int(n_particles), int(dims), int(points_per_dim), float(spacing),
                    tuple(float(m) for m in masses),
                    None if charges is None else tuple(float(e) for e in charges))
    cap = mixed_cap if mixed else pure_cap
    if grid.dim > cap:
        raise CapExceeded(f"Hilbert dimension {grid.dim} exceeds cap {cap}")
    return grid


@dataclass(frozen=True, eq=False)
class Configuration:
    """Continuum particle positions, shape (N, d), reduced into the periodic box."""
    positions: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        pos = np.mod(np.asarray(self.positions, dtype=float).reshape(
            self.grid.n_particles, self.grid.dims), self.grid.box)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    def nearest_indices(self) -> tuple:
        idx = np.rint(self.positions / self.grid.spacing).astype(int) % self.grid.points_per_dim
        return tuple(idx.ravel())


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        amp = np.array(self.amplitudes, dtype=complex).reshape(self.grid.shape)
        norm = np.sqrt(np.sum(np.abs(amp) ** 2))
        if abs(norm - 1.0) > 1e-10:
            raise BadArgument(f"state not normalised (norm {norm}); use StateVector.normalized")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def normalized(cls, amplitudes, grid: GridSpec) -> "StateVector":
        amp = np.asarray(amplitudes, dtype=complex).reshape(grid.shape)
        norm = np.sqrt(np.sum(np.abs(amp) ** 2))
        if not norm > 0 or not np.isfinite(norm):
            raise BadArgument("zero-norm or non-finite state")
        return cls(amp / norm, grid)

    @property
    def vector(self) -> np.ndarray:
        return self.amplitudes.ravel()

    def probabilities(self) -> np.ndarray:
        """|psi|^2 per configuration (sums to one)."""
        return np.abs(self.amplitudes) ** 2

    def projector(self) -> "DensityMatrix":
        v = self.vector
        return DensityMatrix(np.outer(v, v.conj()), self.grid)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    entries: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        rho = np.array(self.entries, dtype=complex)
        d = self.grid.dim
        if rho.shape != (d, d):
            raise BadArgument(f"density matrix must be {d}x{d}, got {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T), initial=0.0) > 1e-10:
            raise BadArgument("density matrix not Hermitian")
        if abs(np.trace(rho).real - 1.0) > 1e-10:
            raise BadArgument(f"density matrix trace {np.trace(rho).real} != 1")
        rho.setflags(write=False)
        object.__setattr__(self, "entries", rho)

    @classmethod
    def from_state(cls, psi: StateVector) -> "DensityMatrix":
        return psi.projector()

    @classmethod
    def mixture(cls, states, weights) -> "DensityMatrix":
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
            raise BadArgument("mixture weights must be a probability vector")
        grid = states[0].grid
        rho = sum(w * np.outer(s.vector, s.vector.conj()) for w, s in zip(weights, states))
        return cls(rho, grid)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])

    def check_positive(self, slack=1e-8) -> bool:
        return self.min_eigenvalue() >= -slack

    def probabilities(self) -> np.ndarray:
        """Diagonal <q|rho|q> on the configuration grid."""
        return np.real(np.diagonal(self.entries)).reshape(self.grid.shape)

    def is_pure(self, tol=1e-10) -> bool:
        return abs(np.real(np.trace(self.entries @ self.entries)) - 1) < tol


@dataclass(frozen=True)
class GrwParams:
    lam: float = 0.1
    sigma: float = 1.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise BadArgument(f"collapse rate must be >= 0, got {self.lam}")
        if not self.sigma > 0:
            raise BadArgument(f"collapse width must be > 0, got {self.sigma}")

    physical_defaults = PHYSICAL_DEFAULTS


# ---------------------------------------------------------------------------
# Gaussian collapse primitives


def _wrapped_gaussian_1d(u, sigma: float, box: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    reach = sigma * math.sqrt(2 * math.log(1 / _GAUSS_TAIL)) + np.max(np.abs(u), initial=0.0)
    n_img = int(math.ceil(reach / box)) + 1
    w = np.arange(-n_img, n_img + 1) * box
    z = u[..., None] + w
    return np.exp(-(z**2) / (2 * sigma**2)).sum(axis=-1) / math.sqrt(2 * math.pi * sigma**2)


@lru_cache(maxsize=64)
def _grid_norm_1d(sigma: float, points: int, spacing: float) -> float:
    box = points * spacing
    return float(_wrapped_gaussian_1d(np.arange(points) * spacing, sigma, box).sum() * spacing)


def gaussian_profile(x, sigma: float, grid: GridSpec, renormalize=True):
    """Periodised Gaussian of width ``sigma`` at displacement(s) ``x``.

    ``x`` has trailing dimension ``grid.dims`` (a scalar is accepted for d=1).
    With ``renormalize`` the grid sum of g times a^d is exactly one.
    """
    if not sigma > 0:
        raise BadArgument(f"sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=float)
    if grid.dims == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    vals = _wrapped_gaussian_1d(x, sigma, grid.box)
    if renormalize:
        raw_mass = _grid_norm_1d(float(sigma), grid.points_per_dim, grid.spacing)
        vals = vals / raw_mass
    out = np.prod(vals, axis=-1)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=64)
def _offset_table(sigma: float, points: int, spacing: float) -> np.ndarray:
    box = points * spacing
    g1 = _wrapped_gaussian_1d(np.arange(points) * spacing, sigma, box)
    g1 = g1 / (g1.sum() * spacing)
    g1.setflags(write=False)
    return g1


def offset_table(grid: GridSpec, sigma: float) -> np.ndarray:
    """1D renormalised Gaussian at grid offsets 0..L-1 (one factor of g)."""
    if not sigma > 0:
        raise BadArgument(f"sigma must be positive, got {sigma}")
    return _offset_table(float(sigma), grid.points_per_dim, grid.spacing)


@lru_cache(maxsize=64)
def _circulant(sigma: float, points: int, spacing: float, sqrt: bool) -> np.ndarray:
    g1 = _offset_table(sigma, points, spacing)
    idx = (np.arange(points)[None, :] - np.arange(points)[:, None]) % points
    c = g1[idx]
    if sqrt:
        c = np.sqrt(c)
    c.setflags(write=False)
    return c


def collapse_matrix(grid: GridSpec, sigma: float, sqrt=False) -> np.ndarray:
    """C[x, u] = g1(u - x) per axis (or its square root)."""
    offset_table(grid, sigma)
    return _circulant(float(sigma), grid.points_per_dim, grid.spacing, bool(sqrt))


def marginal(prob: np.ndarray, grid: GridSpec, i: int, batch_ndim=0) -> np.ndarray:
    """Single-particle marginal of particle ``i`` from a configuration-grid array."""
    keep = set(a + batch_ndim for a in grid.particle_axes(i))
    axes = tuple(a for a in range(batch_ndim, batch_ndim + grid.n_axes) if a not in keep)
    return prob.sum(axis=axes) if axes else prob


def smear(site_array: np.ndarray, grid: GridSpec, sigma: float, batch_ndim=0) -> np.ndarray:
    """Apply sum_u g(u - x) f(u) along each spatial axis of a single-particle array."""
    c = collapse_matrix(grid, sigma)
    out = site_array
    for ax in range(grid.dims):
        out = np.moveaxis(np.tensordot(out, c, axes=([batch_ndim + ax], [1])), -1, batch_ndim + ax)
    return out


def _as_index(grid: GridSpec, x) -> tuple:
    idx = tuple(int(v) for v in np.atleast_1d(x))
    if len(idx) != grid.dims or any(not 0 <= v < grid.points_per_dim for v in idx):
        raise BadArgument(f"{x!r} is not a grid point index of dimension {grid.dims}")
    return idx


def collapse_weights(psi: StateVector, i: int, sigma: float) -> np.ndarray:
    """Z(x)^2 for all single-particle grid points x; sums to 1 after times a^d."""
    grid = psi.grid
    return smear(marginal(psi.probabilities(), grid, i), grid, sigma)


def collapse_weight(psi: StateVector, i: int, x, sigma: float) -> float:
    return float(collapse_weights(psi, i, sigma)[_as_index(psi.grid, x)])


def collapse_multiplier(grid: GridSpec, i: int, x, sigma: float) -> np.ndarray:
    """g(q_i - x)^(1/2) as a broadcastable array over the configuration grid."""
    x = _as_index(grid, x)
    s = collapse_matrix(grid, sigma, sqrt=True)
    out = np.ones((1,) * grid.n_axes)
    for ax, xj in zip(grid.particle_axes(i), x):
        shape = [1] * grid.n_axes
        shape[ax] = grid.points_per_dim
        out = out * s[xj].reshape(shape)
    return out


def collapse_state(psi: StateVector, i: int, x, sigma: float) -> StateVector:
    mult = collapse_multiplier(psi.grid, i, x, sigma)
    new = mult * psi.amplitudes
    z = math.sqrt(float(np.sum(np.abs(new) ** 2)))
    if z <= 1e-15:
        raise ZeroWeight(f"collapse weight Z={z} at center {x} for particle {i}")
    return StateVector.normalized(new, psi.grid)


# ---------------------------------------------------------------------------
# Operators


@dataclass(frozen=True, eq=False)
class DiagonalOp:
    """Multiplication operator in the position basis."""
    values: np.ndarray
    grid: GridSpec

    def apply(self, arr):
        return self.values * arr

    def dense(self) -> np.ndarray:
        return np.diag(np.asarray(self.values, dtype=complex).ravel())

    def expectation(self, psi: StateVector) -> float:
        return float(np.sum(self.values * psi.probabilities()))


class Hamiltonian:
    """H = sum_k -(1/2 m_k) Laplacian_k + V, or an arbitrary dense Hermitian matrix.

    The kinetic part is spectral on the periodic grid.  Propagation uses the
    exact Fourier phase when V vanishes, an eigendecomposition up to
    ``EIG_CAP`` configurations, and Strang split-stepping beyond that.
    """

    def __init__(self, grid: GridSpec, potential=None, matrix=None, max_substep=0.01):
        self.grid = grid
        self.max_substep = max_substep
        self._matrix = None
        if matrix is not None:
            m = np.asarray(matrix, dtype=complex)
            if m.shape != (grid.dim, grid.dim):
                raise BadArgument("dense Hamiltonian has wrong shape")
            if np.max(np.abs(m - m.conj().T)) > 1e-12:
                raise BadArgument("Hamiltonian matrix not Hermitian")
            self._matrix = m
            self.potential = None
            self.kinetic = None
            return
        if potential is None:
            v = np.zeros(grid.shape)
        elif callable(potential):
            coords = np.indices(grid.shape) * grid.spacing
            v = np.asarray(potential(coords), dtype=float) * np.ones(grid.shape)
        else:
            v = np.asarray(potential, dtype=float) * np.ones(grid.shape)
        if not np.all(np.isfinite(v)):
            raise BadArgument("potential must be finite on the grid")
        self.potential = v
        k = grid.wavenumbers()
        kin = np.zeros(grid.shape)
        for ax in range(grid.n_axes):
            m = grid.masses[ax // grid.dims]
            shape = [1] * grid.n_axes
            shape[ax] = grid.points_per_dim
            kin = kin + (HBAR**2 * k**2 / (2 * m)).reshape(shape)
        self.kinetic = kin

    @classmethod
    def from_dense(cls, grid: GridSpec, matrix) -> "Hamiltonian":
        return cls(grid, matrix=matrix)

    @classmethod
    def zero(cls, grid: GridSpec) -> "Hamiltonian":
        """H = 0: no kinetic term, so only collapses change the state."""
        h = cls(grid)
        h.kinetic = np.zeros(grid.shape)
        return h

    @property
    def is_zero(self) -> bool:
        if self.is_dense:
            return not np.any(self._matrix)
        return not np.any(self.kinetic) and not np.any(self.potential)

    @property
    def is_dense(self) -> bool:
        return self._matrix is not None

    @property
    def is_free(self) -> bool:
        return not self.is_dense and not np.any(self.potential)

    def _fft_axes(self, arr):
        return tuple(range(arr.ndim - self.grid.n_axes, arr.ndim))

    def apply(self, arr: np.ndarray) -> np.ndarray:
        """H acting on amplitude arrays of shape (..., *grid.shape)."""
        if self.is_dense:
            flat = arr.reshape(arr.shape[: arr.ndim - self.grid.n_axes] + (-1,))
            return (flat @ self._matrix.T).reshape(arr.shape)
        ax = self._fft_axes(arr)
        kin = np.fft.ifftn(self.kinetic * np.fft.fftn(arr, axes=ax), axes=ax)
        return kin + self.potential * arr

    def dense(self) -> np.ndarray:
        if self.is_dense:
            return self._matrix
        eye = np.eye(self.grid.dim, dtype=complex).reshape((self.grid.dim,) + self.grid.shape)
        cols = self.apply(eye).reshape(self.grid.dim, self.grid.dim)
        h = cols.T
        return 0.5 * (h + h.conj().T)

    @cached_property
    def eig(self):
        if self.grid.dim > EIG_CAP:
            raise CapExceeded(f"eigendecomposition capped at dimension {EIG_CAP}")
        h = self.dense()
        if not np.any(h.imag):
            return np.linalg.eigh(h.real)
        return np.linalg.eigh(h)

    @cached_property
    def _eig_complex(self):
        vecs = self.eig[1].astype(complex)
        return np.ascontiguousarray(vecs.T), np.ascontiguousarray(vecs.conj())

    def norm_estimate(self) -> float:
        if self.is_dense:
            return float(np.max(np.sum(np.abs(self._matrix), axis=1)))
        return float(np.max(self.kinetic) + np.max(np.abs(self.potential)))

    def propagate(self, arr: np.ndarray, dt) -> np.ndarray:
        """exp(-i H dt) on arrays (..., *grid.shape); ``dt`` may broadcast over the batch."""
        arr = np.asarray(arr, dtype=complex)
        dt = np.asarray(dt, dtype=float)
        batch = arr.shape[: arr.ndim - self.grid.n_axes]
        if self.is_zero:
            return arr.copy()
        dt_b = dt.reshape(dt.shape + (1,) * self.grid.n_axes) if dt.ndim else dt
        if self.is_free:
            ax = self._fft_axes(arr)
            return np.fft.ifftn(np.exp(-1j * self.kinetic * dt_b / HBAR) * np.fft.fftn(arr, axes=ax), axes=ax)
        if self.grid.dim <= EIG_CAP:
            e, vecs = self.eig
            flat = arr.reshape(batch + (self.grid.dim,))
            dt_e = dt[..., None] if dt.ndim else dt
            phase = np.exp(-1j * e * dt_e / HBAR)
            vc = self._eig_complex
            c = (flat @ vc[1]) * phase
            return (c @ vc[0]).reshape(arr.shape)
        if dt.ndim:
            out = np.empty_like(arr)
            for idx in np.ndindex(*batch):
                out[idx] = self._split_step(arr[idx], float(dt[idx]))
            return out
        return self._split_step(arr, float(dt))

    def evolver(self, arr: np.ndarray):
        """Callable dt -> exp(-i H dt) arr, caching the eigenbasis coefficients of ``arr``."""
        arr = np.asarray(arr, dtype=complex)
        if self.is_zero or self.is_free or self.grid.dim > EIG_CAP:
            return lambda dt, rows=None: self.propagate(arr if rows is None else arr[rows], dt)
        e = self.eig[0]
        vc = self._eig_complex
        batch = arr.shape[: arr.ndim - self.grid.n_axes]
        coef = arr.reshape(batch + (self.grid.dim,)) @ vc[1]

        def at(dt, rows=None):
            c = coef if rows is None else coef[rows]
            dt = np.asarray(dt, dtype=float)
            dt_e = dt[..., None] if dt.ndim else dt
            return ((c * np.exp(-1j * e * dt_e / HBAR)) @ vc[0]).reshape(c.shape[:-1] + self.grid.shape)

        return at

    def _split_step(self, arr, dt):
        n = max(1, int(math.ceil(abs(dt) / self.max_substep)))
        h = dt / n
        half_v = np.exp(-0.5j * self.potential * h / HBAR)
        kin = np.exp(-1j * self.kinetic * h / HBAR)
        ax = self._fft_axes(arr)
        for _ in range(n):
            arr = half_v * arr
            arr = np.fft.ifftn(kin * np.fft.fftn(arr, axes=ax), axes=ax)
            arr = half_v * arr
        return arr

    def unitary(self, dt: float) -> np.ndarray:
        eye = np.eye(self.grid.dim, dtype=complex).reshape((self.grid.dim,) + self.grid.shape)
        return self.propagate(eye, dt).reshape(self.grid.dim, self.grid.dim).T


def build_hamiltonian(grid: GridSpec, potential=None) -> Hamiltonian:
    """``potential``: None, a constant, an array over the grid, or a callable taking
    the coordinate array ``(n_axes, *grid.shape)``."""
    return Hamiltonian(grid, potential)


def harmonic_potential(grid: GridSpec, omega: float, center=None):
    """V = sum_k m_k omega^2 |q_k - c|^2 / 2 using the minimal periodic image."""
    c = grid.box / 2 if center is None else center

    def v(coords):
        out = 0.0
        for ax in range(grid.n_axes):
            m = grid.masses[ax // grid.dims]
            dx = (coords[ax] - c + grid.box / 2) % grid.box - grid.box / 2
            out = out + 0.5 * m * omega**2 * dx**2
        return out

    return v


def mass_density_operator(grid: GridSpec, x, weights=None) -> DiagonalOp:
    """Sum_i w_i delta(Q_i - x) with the discrete delta = indicator / a^d."""
    x = _as_index(grid, x)
    w = grid.masses if weights is None else tuple(weights)
    vals = np.zeros(grid.shape)
    idx = np.indices(grid.shape)
    for i in range(grid.n_particles):
        hit = np.ones(grid.shape, dtype=bool)
        for ax, xj in zip(grid.particle_axes(i), x):
            hit &= idx[ax] == xj
        vals = vals + w[i] * hit
    return DiagonalOp(vals / grid.cell_volume, grid)


# ---------------------------------------------------------------------------
# System / environment factorisation


@dataclass(frozen=True)
class TensorSplit:
    grid: GridSpec
    system: tuple
    environment: tuple

    @property
    def sys_grid(self) -> GridSpec:
        return self.grid.sub_grid(self.system)

    @property
    def env_grid(self) -> GridSpec:
        return self.grid.sub_grid(self.environment)

    def _perm(self):
        d = self.grid.dims
        order = [ax for p in self.system + self.environment for ax in range(p * d, (p + 1) * d)]
        return order

    def embed(self, psi_sys: StateVector, phi_env: StateVector) -> StateVector:
        """psi (x) phi arranged in the full grid's particle order."""
        joint = np.multiply.outer(psi_sys.amplitudes, phi_env.amplitudes)
        full = np.transpose(joint, np.argsort(self._perm()))
        return StateVector(full, self.grid)

    def _to_split_order(self, op: np.ndarray) -> np.ndarray:
        n = self.grid.n_axes
        t = op.reshape(self.grid.shape * 2)
        perm = self._perm()
        return np.transpose(t, perm + [n + p for p in perm])

    def partial_inner(self, op, phi_env: StateVector) -> np.ndarray:
        """<phi| A |phi>_env as an operator on the system space."""
        ds, de = self.sys_grid.dim, self.env_grid.dim
        t = self._to_split_order(np.asarray(op)).reshape(ds, de, ds, de)
        phi = phi_env.vector
        return np.einsum("e,aebf,f->ab", phi.conj(), t, phi)

    def kron(self, a_sys, b_env) -> np.ndarray:
        """A_sys (x) B_env as a full-grid operator."""
        ds, de = self.sys_grid.dim, self.env_grid.dim
        n = self.grid.n_axes
        joint = np.kron(np.asarray(a_sys), np.asarray(b_env)).reshape(
            self.sys_grid.shape + self.env_grid.shape + self.sys_grid.shape + self.env_grid.shape)
        inv = list(np.argsort(self._perm()))
        return np.transpose(joint, inv + [n + p for p in inv]).reshape(ds * de, ds * de)


def tensor_split(grid: GridSpec, system, environment=None) -> TensorSplit:
    system = tuple(int(p) for p in system)
    if environment is None:
        environment = tuple(p for p in range(grid.n_particles) if p not in system)
    environment = tuple(int(p) for p in environment)
    labels = system + environment
    if len(set(labels)) != len(labels) or sorted(labels) != list(range(grid.n_particles)):
        raise BadPartition(f"{system} / {environment} is not a partition of the particles")
    if not system or not environment:
        raise BadPartition("system and environment must both be non-empty")
    return TensorSplit(grid, system, environment)
