"""LDOS simulation of the Cu(111) Shockley surface state with point impurities.

The clean surface state is a 2D free electron gas with dispersion
``hbar^2 k^2 / (2 m_eff) - mu``. Point scatterers are resummed exactly with
a T-matrix on top of the free retarded propagator, and the LDOS is read off
the imaginary part of the full Green's function on the image grid.

A brute-force lattice route (dense diagonalization or direct resolvent
inversion of a discretized Hamiltonian) is provided as an independent check.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import linalg, special

from .constants import CU111_M_EFF, CU111_MU, EULER_GAMMA, clean_dos, kinetic_prefactor

log = logging.getLogger(__name__)

#: Largest lattice edge accepted by the dense oracle.
MAX_ORACLE_SITES = 64
#: Condition number above which the multiple-scattering solve is rejected.
MAX_CONDITION = 1e12


class PhysicsError(ValueError):
    """Invalid physical input."""


class EvanescentError(PhysicsError):
    """omega + mu <= 0: no propagating states at the probe energy."""


class SingularityError(PhysicsError):
    """The off-diagonal propagator was evaluated at coincident points."""


class SingularMatrixError(ArithmeticError):
    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3g})")
        self.condition = condition


class OracleSizeError(MemoryError):
    """Lattice too large for dense linear algebra."""


@dataclass(frozen=True)
class SurfaceModel:
    """Hamiltonian constants of the surface state.

    ``cutoff`` is the short-distance length (nm) used to regularize the
    logarithmic divergence of the 2D propagator at coincident points.
    """

    m_eff: float = CU111_M_EFF
    mu: float = CU111_MU
    omega: float = 0.01
    eta: float = 0.002
    cutoff: float = 0.25

    def __post_init__(self):
        for name in ("m_eff", "mu", "omega", "eta", "cutoff"):
            if not math.isfinite(getattr(self, name)):
                raise PhysicsError(f"{name} must be finite")
        if self.m_eff <= 0:
            raise PhysicsError("m_eff must be positive")
        if self.eta <= 0:
            raise PhysicsError("eta must be positive")
        if self.cutoff <= 0:
            raise PhysicsError("cutoff must be positive")
        if self.omega + self.mu <= 0:
            raise EvanescentError(
                f"omega + mu = {self.omega + self.mu:g} eV <= 0; "
                "only propagating states are supported"
            )

    @property
    def rho0(self) -> float:
        return clean_dos(self.m_eff)

    @property
    def kinetic(self) -> float:
        return kinetic_prefactor(self.m_eff)

    def complex_wavevector(self) -> complex:
        """k evaluated at omega + i eta; Im k > 0 so outgoing waves decay."""
        return complex(np.sqrt(complex(self.omega + self.mu, self.eta) / self.kinetic))

    def as_dict(self) -> dict[str, float]:
        return {
            "m_eff": self.m_eff,
            "mu": self.mu,
            "omega": self.omega,
            "eta": self.eta,
            "cutoff": self.cutoff,
        }


@dataclass(frozen=True)
class ImpuritySet:
    """Point scatterers. Strengths are potential amplitudes in eV nm^2."""

    positions: np.ndarray
    strengths: np.ndarray
    bounds: tuple[float, float, float, float] | None = None  # (x0, y0, width, height)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        v = np.asarray(self.strengths, dtype=float).reshape(-1)
        if len(pos) != len(v):
            raise PhysicsError("positions and strengths differ in length")
        if not np.all(np.isfinite(pos)):
            raise PhysicsError("impurity positions must be finite")
        if not np.all(np.isfinite(v)) or np.any(v == 0):
            raise PhysicsError("impurity strengths must be finite and nonzero")
        if self.bounds is not None and len(pos):
            x0, y0, w, h = self.bounds
            inside = (
                (pos[:, 0] >= x0) & (pos[:, 0] <= x0 + w)
                & (pos[:, 1] >= y0) & (pos[:, 1] <= y0 + h)
            )
            if not inside.all():
                raise PhysicsError("impurity outside the field of view")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "strengths", v)

    def __len__(self) -> int:
        return len(self.strengths)

    @classmethod
    def empty(cls, bounds=None) -> "ImpuritySet":
        return cls(np.zeros((0, 2)), np.zeros(0), bounds)

    def mirrored_x(self, axis_x: float) -> "ImpuritySet":
        pos = self.positions.copy()
        pos[:, 0] = 2.0 * axis_x - pos[:, 0]
        return ImpuritySet(pos, self.strengths.copy(), self.bounds)


@dataclass(frozen=True)
class Grid:
    """Raster specification: ``shape`` is (H, W), extent and origin in nm.

    Pixel centers sit at ``origin + (index + 0.5) * pixel_size``, so a
    reflection about the center of the field of view maps pixels onto pixels.
    """

    shape: tuple[int, int]
    extent: tuple[float, float]
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        h, w = self.shape
        if h < 2 or w < 2:
            raise PhysicsError("grid must be at least 2x2")
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise PhysicsError("grid extent must be positive")

    @classmethod
    def square(cls, n: int, size_nm: float) -> "Grid":
        return cls((n, n), (size_nm, size_nm))

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        h, w = self.shape
        width, height = self.extent
        x = self.origin[0] + (np.arange(w) + 0.5) * width / w
        y = self.origin[1] + (np.arange(h) + 0.5) * height / h
        return x, y

    def points(self) -> np.ndarray:
        """(H*W, 2) array of pixel-center coordinates in row-major order."""
        x, y = self.axes()
        xx, yy = np.meshgrid(x, y)
        return np.column_stack([xx.ravel(), yy.ravel()])

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (*self.origin, *self.extent)

    @property
    def center(self) -> tuple[float, float]:
        return (self.origin[0] + self.extent[0] / 2, self.origin[1] + self.extent[1] / 2)


@dataclass
class ScalarField2D:
    """An H x W real raster with its physical placement.

    ``values[i, j]`` is row ``i`` (y) and column ``j`` (x).
    """

    values: np.ndarray
    extent: tuple[float, float] = (1.0, 1.0)
    origin: tuple[float, float] = (0.0, 0.0)
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or min(self.values.shape) < 2:
            raise ValueError(f"expected an H x W raster with H, W >= 2, got {self.values.shape}")
        if self.extent[0] <= 0 or self.extent[1] <= 0:
            raise ValueError("extent must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("raster contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray, **meta) -> "ScalarField2D":
        return ScalarField2D(values, self.extent, self.origin, {**self.meta, **meta})


def fermi_wavevector(model: SurfaceModel) -> float:
    """Real wavevector (1/nm) of the surface state at the probe energy."""
    e = model.omega + model.mu
    if e <= 0:
        raise EvanescentError(f"omega + mu = {e:g} eV <= 0")
    return math.sqrt(e / model.kinetic)


def _propagator(distance: np.ndarray, model: SurfaceModel) -> np.ndarray:
    k = model.complex_wavevector()
    return -1j * math.pi * model.rho0 * special.hankel1(0, k * distance)


def free_greens_function(r1, r2, model: SurfaceModel) -> np.ndarray | complex:
    """Retarded free propagator G0(r1, r2; omega + i eta) in 1/(eV nm^2).

    ``r1`` and ``r2`` broadcast as (..., 2) arrays of points.
    """
    d = np.linalg.norm(np.asarray(r1, float) - np.asarray(r2, float), axis=-1)
    if np.any(d == 0):
        raise SingularityError("G0 is singular at coincident points; use onsite_greens_function")
    g = _propagator(d, model)
    return complex(g) if np.ndim(g) == 0 else g


def onsite_greens_function(model: SurfaceModel) -> complex:
    """Cutoff-regularized G0(r, r).

    Small-argument expansion of the propagator at distance ``model.cutoff``:
    ``-i pi rho0 + 2 rho0 (ln(k a / 2) + gamma_E)``. The imaginary part tends
    to ``-pi rho0`` as eta -> 0, independent of the cutoff.
    """
    k = model.complex_wavevector()
    rho0 = model.rho0
    return -1j * math.pi * rho0 + 2.0 * rho0 * (np.log(k * model.cutoff / 2.0) + EULER_GAMMA)


def continuum_kernel(model: SurfaceModel):
    """Propagator as a function of displacement vectors (..., 2).

    Distances below the cutoff are clamped to it; exact zeros get the
    regularized on-site value.
    """
    g_on = onsite_greens_function(model)

    def kernel(disp: np.ndarray) -> np.ndarray:
        distance = np.linalg.norm(disp, axis=-1)
        out = np.empty(distance.shape, dtype=complex)
        onsite = distance == 0
        out[onsite] = g_on
        out[~onsite] = _propagator(np.maximum(distance[~onsite], model.cutoff), model)
        return out

    return kernel


def impurity_propagator(imps: ImpuritySet, model: SurfaceModel, kernel=None) -> np.ndarray:
    """N x N inter-impurity propagator with the regularized on-site diagonal."""
    kernel = kernel or continuum_kernel(model)
    return kernel(imps.positions[:, None, :] - imps.positions[None, :, :])


def t_matrix_solve(imps: ImpuritySet, model: SurfaceModel, kernel=None) -> np.ndarray:
    """Multiple-scattering T-matrix ``T = (I - V G0_imp)^-1 V``."""
    n = len(imps)
    if n == 0:
        raise PhysicsError("T-matrix needs at least one impurity")
    v = imps.strengths
    a = np.eye(n) - v[:, None] * impurity_propagator(imps, model, kernel)
    cond = float(np.linalg.cond(a))
    if not math.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMatrixError("multiple-scattering matrix is singular", cond)
    return linalg.solve(a, np.diag(v).astype(complex))


def greens_diagonal(points: np.ndarray, imps: ImpuritySet, model: SurfaceModel, kernel=None) -> np.ndarray:
    """Full G(r, r) = G0(r, r) + sum_jl G0(r, R_j) T_jl G0(R_l, r) at (P, 2) ``points``.

    ``kernel`` maps displacements to the free propagator; the continuum
    Hankel kernel is the default.
    """
    kernel = kernel or continuum_kernel(model)
    g_on = complex(kernel(np.zeros((1, 2)))[0])
    if len(imps) == 0:
        return np.full(len(points), g_on, dtype=complex)
    t = t_matrix_solve(imps, model, kernel)
    g = kernel(points[:, None, :] - imps.positions[None, :, :])
    return g_on + np.einsum("pi,ij,pj->p", g, t, g)


def ldos_map(grid: Grid, imps: ImpuritySet, model: SurfaceModel, kernel=None) -> ScalarField2D:
    """LDOS ``-Im G(r, r) / pi`` on every pixel of ``grid``."""
    g = greens_diagonal(grid.points(), imps, model, kernel)
    a = (-g.imag / math.pi).reshape(grid.shape)
    return ScalarField2D(
        a,
        grid.extent,
        grid.origin,
        {"ldos_min": float(a.min()), "ldos_max": float(a.max()), "units": "1/(eV nm^2)"},
    )


# -- lattice oracle ---------------------------------------------------------


@dataclass(frozen=True)
class LatticeSpec:
    """Periodic square lattice of ``n`` x ``n`` sites with spacing in nm.

    ``dispersion`` selects the discretized kinetic term: ``"spectral"`` uses
    the exact parabolic band on the lattice's Fourier grid, ``"stencil"``
    the five-point finite-difference Laplacian.
    """

    n: int
    spacing: float
    dispersion: str = "spectral"

    def __post_init__(self):
        if self.n < 2:
            raise PhysicsError("lattice needs at least 2x2 sites")
        if self.spacing <= 0:
            raise PhysicsError("lattice spacing must be positive")
        if self.dispersion not in ("spectral", "stencil"):
            raise PhysicsError(f"unknown dispersion {self.dispersion!r}")

    @property
    def grid(self) -> Grid:
        # Sites coincide with pixel centers of this grid.
        size = self.n * self.spacing
        return Grid((self.n, self.n), (size, size), (-0.5 * self.spacing, -0.5 * self.spacing))

    def site_index(self, position) -> int:
        """Row-major index of the site nearest to ``position`` (x, y)."""
        ix = int(round(position[0] / self.spacing)) % self.n
        iy = int(round(position[1] / self.spacing)) % self.n
        return iy * self.n + ix


def lattice_hamiltonian(lattice: LatticeSpec, imps: ImpuritySet, model: SurfaceModel) -> np.ndarray:
    """Dense real-symmetric H = H0 + V on the lattice, energies relative to mu."""
    n, a = lattice.n, lattice.spacing
    if n > MAX_ORACLE_SITES:
        raise OracleSizeError(f"lattice {n}x{n} exceeds the dense cap {MAX_ORACLE_SITES}")
    if lattice.dispersion == "stencil":
        shift = np.roll(np.eye(n), 1, axis=1)
        lap1 = 2.0 * np.eye(n) - shift - shift.T
        t = model.kinetic / a**2
        h0 = t * (np.kron(lap1, np.eye(n)) + np.kron(np.eye(n), lap1))
    else:
        q = 2.0 * np.pi * np.fft.fftfreq(n, d=a)
        if n % 2 == 0:
            # Nyquist mode: symmetric choice keeps H0 real.
            q[n // 2] = np.pi / a
        f = np.fft.fft(np.eye(n), norm="ortho")
        # 1D kinetic operator F^H diag(q^2) F, then Kronecker sum.
        k1 = (f.conj().T * (model.kinetic * q**2)) @ f
        k1 = k1.real
        h0 = np.kron(k1, np.eye(n)) + np.kron(np.eye(n), k1)
    h = h0 - model.mu * np.eye(n * n)
    for pos, v in zip(imps.positions, imps.strengths):
        i = lattice.site_index(pos)
        h[i, i] += v / a**2
    return h


def lattice_greens_diagonal(
    lattice: LatticeSpec, imps: ImpuritySet, model: SurfaceModel, method: str = "eigen"
) -> np.ndarray:
    """Diagonal of the lattice resolvent (omega + i eta - H)^-1, per unit area.

    ``method="eigen"`` sums |psi_a(r)|^2 / (omega - E_a + i eta) over the
    eigenstates; ``method="inverse"`` inverts the resolvent matrix directly.
    """
    h = lattice_hamiltonian(lattice, imps, model)
    z = complex(model.omega, model.eta)
    if method == "eigen":
        e, psi = linalg.eigh(h)
        g = (np.abs(psi) ** 2) @ (1.0 / (z - e))
    elif method == "inverse":
        g = np.diag(linalg.inv(z * np.eye(len(h)) - h)).copy()
    else:
        raise ValueError(f"unknown method {method!r}")
    return g / lattice.spacing**2


def spectral_ldos_oracle(
    lattice: LatticeSpec, imps: ImpuritySet, model: SurfaceModel, method: str = "eigen"
) -> ScalarField2D:
    """Brute-force LDOS on a lattice, in 1/(eV nm^2)."""
    g = lattice_greens_diagonal(lattice, imps, model, method)
    a = (-g.imag / math.pi).reshape(lattice.n, lattice.n)
    grid = lattice.grid
    return ScalarField2D(a, grid.extent, grid.origin, {"method": method})


def _lattice_band(lattice: LatticeSpec, model: SurfaceModel) -> np.ndarray:
    n, a = lattice.n, lattice.spacing
    q = 2.0 * np.pi * np.fft.fftfreq(n, d=a)
    if lattice.dispersion == "stencil":
        e1 = 2.0 * model.kinetic / a**2 * (1.0 - np.cos(q * a))
    else:
        if n % 2 == 0:
            q[n // 2] = np.pi / a
        e1 = model.kinetic * q**2
    return e1[:, None] + e1[None, :] - model.mu


def lattice_free_propagator(lattice: LatticeSpec, model: SurfaceModel) -> np.ndarray:
    """Clean-lattice G0 per unit area as an (n, n) table over periodic displacements.

    Entry ``[iy, ix]`` is G0 for a displacement of (ix, iy) sites. Computed by
    FFT, so it is not subject to the dense-solve cap.
    """
    z = complex(model.omega, model.eta)
    g_q = 1.0 / (z - _lattice_band(lattice, model))
    return np.fft.ifft2(g_q) / lattice.spacing**2


def lattice_kernel(lattice: LatticeSpec, model: SurfaceModel):
    """Displacement kernel backed by :func:`lattice_free_propagator`.

    Displacements are rounded to the nearest lattice vector and wrapped.
    """
    table = lattice_free_propagator(lattice, model)

    def kernel(disp: np.ndarray) -> np.ndarray:
        idx = np.rint(np.asarray(disp) / lattice.spacing).astype(int) % lattice.n
        return table[idx[..., 1], idx[..., 0]]

    return kernel


def lattice_onsite_greens(lattice: LatticeSpec, model: SurfaceModel) -> complex:
    """Clean-lattice G0(r, r) per unit area."""
    return complex(lattice_free_propagator(lattice, model)[0, 0])


def matched_cutoff(lattice: LatticeSpec, model: SurfaceModel) -> float:
    """Cutoff length whose regularized on-site propagator matches the lattice's real part."""
    g = lattice_onsite_greens(lattice, model)
    k = abs(model.complex_wavevector())
    return 2.0 / k * math.exp(g.real / (2.0 * model.rho0) - EULER_GAMMA)


# -- analysis helpers -------------------------------------------------------


def radial_profile(field: ScalarField2D, center: Sequence[float], n_bins: int | None = None):
    """Azimuthal average about ``center``; returns (bin centers in nm, mean values)."""
    h, w = field.shape
    grid = Grid((h, w), field.extent, field.origin)
    pts = grid.points()
    r = np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1])
    dx = field.extent[0] / w
    r_max = min(
        center[0] - field.origin[0],
        field.origin[0] + field.extent[0] - center[0],
        center[1] - field.origin[1],
        field.origin[1] + field.extent[1] - center[1],
    )
    n_bins = n_bins or max(int(r_max / dx), 2)
    edges = np.linspace(0.0, r_max, n_bins + 1)
    idx = np.digitize(r, edges) - 1
    ok = (idx >= 0) & (idx < n_bins)
    sums = np.bincount(idx[ok], weights=field.values.ravel()[ok], minlength=n_bins)
    counts = np.bincount(idx[ok], minlength=n_bins)
    keep = counts > 0
    centers = 0.5 * (edges[1:] + edges[:-1])
    return centers[keep], sums[keep] / counts[keep]


def dominant_radial_frequency(
    radius: np.ndarray, profile: np.ndarray, r_min: float = 1.0, pad: int = 16
) -> float:
    """Angular spatial frequency (rad/nm) of the strongest radial oscillation.

    The profile beyond ``r_min`` is resampled uniformly, detrended,
    multiplied by r to undo the 1/r decay of the Friedel ripples, windowed,
    zero-padded and FFT'd; the peak is refined by parabolic interpolation.
    """
    sel = radius >= r_min
    r, p = radius[sel], profile[sel]
    ru = np.linspace(r[0], r[-1], len(r))
    pu = np.interp(ru, r, p)
    pu = pu - np.polyval(np.polyfit(ru, pu, 1), ru)
    pu = pu * ru
    pu = (pu - pu.mean()) * np.hanning(len(pu))
    nfft = pad * len(pu)
    spec = np.abs(np.fft.rfft(pu, nfft))
    freqs = 2.0 * np.pi * np.fft.rfftfreq(nfft, d=ru[1] - ru[0])
    spec[0] = 0.0
    i = int(np.argmax(spec))
    if 0 < i < len(spec) - 1:
        a, b, c = np.log(spec[i - 1 : i + 2] + 1e-300)
        offset = 0.5 * (a - c) / (a - 2 * b + c)
        return float(freqs[i] + offset * (freqs[1] - freqs[0]))
    return float(freqs[i])
