"""Divergence-free Fourier fields on the 2pi-periodic torus.

A velocity field is stored as one complex coefficient per retained
wavevector k = (k1, k2), 0 < max(|k1|, |k2|) <= N.  The coefficient
multiplies the unit divergence-free basis vector

    e_k(x) = i * (-k2, k1)/|k| * exp(i k.x),

which is orthonormal for the normalized inner product
(u, v) = (2pi)^-2 integral u.v dx.  Reality of the velocity field is
equivalent to the Hermitian symmetry c(-k) = conj(c(k)), and the mean
mode is excluded, so the Stokes operator is the diagonal multiplier
lam_k = |k|^2 with lam_1 = 1.

All array-level routines accept coefficient arrays of shape
(..., K, K) with K = 2N+1 and operate over leading batch dimensions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

__all__ = [
    "TorusBasis",
    "SpectralField",
    "PhysicalField",
    "get_basis",
    "make_hermitian",
    "apply_fractional_power",
    "sobolev_norm",
    "inner_h",
    "to_physical",
    "to_spectral",
    "project_divergence_free",
    "field_from_modes",
    "random_field",
    "write_snapshot",
    "read_snapshot",
]

SNAPSHOT_MAGIC = b"SCBF"
SNAPSHOT_VERSION = 1


class GridCompatibilityError(ValueError):
    """Physical grid too small for the requested truncation or product."""


class TorusBasis:
    """Precomputed wavenumber tables and FFT plumbing for truncation N.

    Parameters
    ----------
    n_modes : int
        Truncation N; retained wavevectors satisfy |k1|, |k2| <= N.
    grid_size : int, optional
        Physical grid points per direction.  The default is the smallest
        FFT-friendly M >= 4N+2, which keeps quadratic and cubic products
        of retained modes alias-free.
    """

    def __init__(self, n_modes: int, grid_size: int | None = None):
        if n_modes < 1:
            raise ValueError("truncation must be at least 1")
        self.n = int(n_modes)
        n = self.n
        self.k_side = 2 * n + 1
        if grid_size is None:
            grid_size = sfft.next_fast_len(4 * n + 2, real=True)
        if grid_size < 3 * n + 1:
            raise GridCompatibilityError(
                f"grid M={grid_size} below dealiasing floor 3N+1={3 * n + 1}"
            )
        self.m = int(grid_size)

        k = np.arange(-n, n + 1)
        self.k1 = k[:, None] * np.ones(self.k_side, dtype=int)[None, :]
        self.k2 = np.ones(self.k_side, dtype=int)[:, None] * k[None, :]
        self.lam = (self.k1**2 + self.k2**2).astype(float)
        self.mask = self.lam > 0.0

        kabs = np.sqrt(np.where(self.mask, self.lam, 1.0))
        # unit vector i*kperp/|k| attached to each mode
        self.eta1 = np.where(self.mask, -1j * self.k2 / kabs, 0.0)
        self.eta2 = np.where(self.mask, 1j * self.k1 / kabs, 0.0)

        # modes with k2 >= 0 (mean excluded) and their rfft2 bins
        up = self.k2 >= 0
        up[n, n] = False
        self.up_i, self.up_j = np.nonzero(up)
        self.row = (self.k1[self.up_i, self.up_j]) % self.m
        self.col = self.k2[self.up_i, self.up_j]
        self.k1_up = self.k1[self.up_i, self.up_j]
        self.k2_up = self.k2[self.up_i, self.up_j]
        self.lam_up = self.lam[self.up_i, self.up_j]
        self.eta1_up = self.eta1[self.up_i, self.up_j]
        self.eta2_up = self.eta2[self.up_i, self.up_j]

        # strictly k2 > 0 modes: their index inside the up enumeration and
        # the flipped positions used to rebuild the lower half plane
        strict = self.k2_up > 0
        self.pos_in_up = np.nonzero(strict)[0]
        self.neg_i = 2 * n - self.up_i[self.pos_in_up]
        self.neg_j = 2 * n - self.up_j[self.pos_in_up]

        # half-plane enumeration for independent Gaussian draws:
        # k2 > 0, plus the k2 = 0, k1 > 0 half line
        half = (self.k2 > 0) | ((self.k2 == 0) & (self.k1 > 0))
        self.half_i, self.half_j = np.nonzero(half)
        self.hconj_i = 2 * n - self.half_i
        self.hconj_j = 2 * n - self.half_j
        self.n_pairs = self.half_i.size

    # -- transforms ---------------------------------------------------

    def zeros(self, *batch: int) -> np.ndarray:
        return np.zeros(batch + (self.k_side, self.k_side), dtype=complex)

    def scatter(self, c_up: np.ndarray) -> np.ndarray:
        """Scatter values on the k2 >= 0 modes into a full Hermitian array."""
        out = np.zeros(c_up.shape[:-1] + (self.k_side, self.k_side), dtype=complex)
        out[..., self.up_i, self.up_j] = c_up
        out[..., self.neg_i, self.neg_j] = np.conj(c_up[..., self.pos_in_up])
        return out

    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        """Velocity samples of shape (..., 2, M, M) on the uniform grid."""
        c = np.asarray(coeffs, dtype=complex)
        batch = c.shape[:-2]
        spec = np.zeros(batch + (2, self.m, self.m // 2 + 1), dtype=complex)
        c_up = c[..., self.up_i, self.up_j]
        spec[..., 0, self.row, self.col] = c_up * self.eta1_up
        spec[..., 1, self.row, self.col] = c_up * self.eta2_up
        return sfft.irfft2(spec, s=(self.m, self.m), axes=(-2, -1)) * self.m**2

    def forward_half(self, samples: np.ndarray) -> np.ndarray:
        """rfft2 of real grid samples, normalized to mode amplitudes."""
        return sfft.rfft2(samples, axes=(-2, -1)) / self.m**2

    def read_half(self, spec: np.ndarray) -> np.ndarray:
        """Read one scalar half spectrum at the k2 >= 0 retained modes."""
        return spec[..., self.row, self.col]

    def from_grid(self, vel: np.ndarray) -> np.ndarray:
        """Project grid velocity onto retained divergence-free modes."""
        vel = np.asarray(vel, dtype=float)
        if vel.shape[-1] != self.m or vel.shape[-2] != self.m:
            raise GridCompatibilityError(
                f"grid shape {vel.shape[-2:]} does not match M={self.m}"
            )
        spec = self.forward_half(vel)
        w1 = self.read_half(spec[..., 0, :, :])
        w2 = self.read_half(spec[..., 1, :, :])
        return self.scatter(w1 * np.conj(self.eta1_up) + w2 * np.conj(self.eta2_up))

    # -- quadrature ---------------------------------------------------

    def grid_mean(self, samples: np.ndarray) -> np.ndarray:
        """Normalized quadrature (2pi)^-2 integral f dx = grid average."""
        return samples.mean(axis=(-2, -1))

    def speed_sq(self, vel: np.ndarray) -> np.ndarray:
        return vel[..., 0, :, :] ** 2 + vel[..., 1, :, :] ** 2

    def lp_norm(self, coeffs: np.ndarray, p: float) -> np.ndarray:
        """L^p norm of the speed |u(x)| under the normalized measure."""
        speed2 = self.speed_sq(self.to_grid(coeffs))
        return self.grid_mean(speed2 ** (p / 2.0)) ** (1.0 / p)

    # -- Gaussian draws ------------------------------------------------

    def hermitian_normal(self, rng: np.random.Generator, *batch: int) -> np.ndarray:
        """Standard complex Gaussian per mode pair, E|xi_k|^2 = 1.

        Draws 2 * n_pairs reals per batch element in a fixed mode order,
        so a stream position depends only on how many fields were drawn.
        """
        flat = rng.standard_normal(batch + (2 * self.n_pairs,))
        xi = (flat[..., : self.n_pairs] + 1j * flat[..., self.n_pairs :]) / np.sqrt(2.0)
        out = self.zeros(*batch)
        out[..., self.half_i, self.half_j] = xi
        out[..., self.hconj_i, self.hconj_j] = np.conj(xi)
        return out


@lru_cache(maxsize=32)
def get_basis(n_modes: int, grid_size: int | None = None) -> TorusBasis:
    return TorusBasis(n_modes, grid_size)


def make_hermitian(coeffs: np.ndarray) -> np.ndarray:
    """Symmetrize so that c(-k) = conj(c(k)) and the mean mode vanishes."""
    c = np.asarray(coeffs, dtype=complex)
    flipped = np.conj(c[..., ::-1, ::-1])
    out = 0.5 * (c + flipped)
    n = (c.shape[-1] - 1) // 2
    out[..., n, n] = 0.0
    return out


@dataclass(frozen=True)
class SpectralField:
    """Divergence-free velocity field in the truncated Fourier basis."""

    n: int
    coeffs: np.ndarray

    def __post_init__(self):
        k_side = 2 * self.n + 1
        if self.coeffs.shape != (k_side, k_side):
            raise ValueError(
                f"coefficient array {self.coeffs.shape} does not match N={self.n}"
            )

    @property
    def basis(self) -> TorusBasis:
        return get_basis(self.n)

    def coeff(self, k1: int, k2: int) -> complex:
        return complex(self.coeffs[k1 + self.n, k2 + self.n])

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return SpectralField(self.n, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return SpectralField(self.n, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.n, self.coeffs * scalar)

    __rmul__ = __mul__

    def copy(self) -> "SpectralField":
        return SpectralField(self.n, self.coeffs.copy())


@dataclass(frozen=True)
class PhysicalField:
    """Real velocity samples, shape (2, M, M), on the uniform torus grid."""

    values: np.ndarray

    @property
    def m(self) -> int:
        return self.values.shape[-1]


def _check_same(u: SpectralField, v: SpectralField) -> None:
    if u.n != v.n:
        raise ValueError(f"mismatched truncations N={u.n} and N={v.n}")


def field_from_modes(n: int, modes: dict[tuple[int, int], complex]) -> SpectralField:
    """Build a field from {(k1, k2): coefficient}, completing conjugates.

    A key (k1, k2) sets that coefficient; the conjugate mode is filled
    automatically unless it is given explicitly.
    """
    basis = get_basis(n)
    c = basis.zeros()
    seen = set()
    for (k1, k2), val in modes.items():
        if max(abs(k1), abs(k2)) > n or (k1, k2) == (0, 0):
            raise ValueError(f"mode {(k1, k2)} outside retained set")
        c[k1 + n, k2 + n] = val
        seen.add((k1, k2))
    for (k1, k2) in list(seen):
        if (-k1, -k2) not in seen:
            c[-k1 + n, -k2 + n] = np.conj(c[k1 + n, k2 + n])
    field = SpectralField(n, c)
    if not np.allclose(c, make_hermitian(c), atol=1e-14):
        raise ValueError("mode table violates Hermitian symmetry")
    return field


def random_field(
    n: int,
    rng: np.random.Generator,
    amplitude: float = 1.0,
    decay: float = 1.0,
) -> SpectralField:
    """Random Hermitian field with |k|^-decay spectral falloff."""
    basis = get_basis(n)
    xi = basis.hermitian_normal(rng)
    profile = np.zeros_like(basis.lam)
    profile[basis.mask] = basis.lam[basis.mask] ** (-decay / 2.0)
    return SpectralField(n, amplitude * profile * xi)


# -- spectral calculus ---------------------------------------------------


def fractional_multiplier(basis: TorusBasis, alpha: float) -> np.ndarray:
    return np.where(basis.mask, basis.lam, 1.0) ** alpha * basis.mask


def apply_fractional_power(u: SpectralField, alpha: float) -> SpectralField:
    """Apply lam_k^alpha per mode (any real alpha; lam_k >= 1)."""
    mult = fractional_multiplier(u.basis, alpha)
    return SpectralField(u.n, u.coeffs * mult)


def sobolev_norm_sq(coeffs: np.ndarray, basis: TorusBasis, alpha: float) -> np.ndarray:
    w = fractional_multiplier(basis, 2.0 * alpha)
    return np.sum(w * np.abs(coeffs) ** 2, axis=(-2, -1))


def sobolev_norm(u: SpectralField, alpha: float = 0.0) -> float:
    """(sum_k lam_k^(2 alpha) |c_k|^2)^(1/2); alpha=0 is the energy norm."""
    return float(np.sqrt(sobolev_norm_sq(u.coeffs, u.basis, alpha)))


def inner_h(u: SpectralField, v: SpectralField) -> float:
    """Normalized L^2 inner product of two real fields."""
    _check_same(u, v)
    return float(np.real(np.sum(u.coeffs * np.conj(v.coeffs))))


def to_physical(u: SpectralField, grid_size: int | None = None) -> PhysicalField:
    basis = u.basis if grid_size is None else get_basis(u.n, grid_size)
    return PhysicalField(basis.to_grid(u.coeffs))


def to_spectral(p: PhysicalField, n: int) -> SpectralField:
    basis = get_basis(n, p.m)
    return SpectralField(n, basis.from_grid(p.values))


def project_divergence_free(p: PhysicalField, n: int) -> SpectralField:
    """Helmholtz projection of grid samples onto retained solenoidal modes.

    Identical to `to_spectral`: reading out the component along the unit
    vector i*kperp/|k| discards gradients and the mean, so the operation
    is idempotent and self-adjoint by construction.
    """
    return to_spectral(p, n)


# -- binary snapshots -----------------------------------------------------


def write_snapshot(path, u: SpectralField) -> None:
    """Little-endian dump: 'SCBF', version, N, count, then per-mode records."""
    i_idx, j_idx = np.nonzero(np.abs(u.coeffs) > 0.0)
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<III", SNAPSHOT_VERSION, u.n, i_idx.size))
        for i, j in zip(i_idx, j_idx):
            c = u.coeffs[i, j]
            fh.write(
                struct.pack("<iidd", int(i - u.n), int(j - u.n), c.real, c.imag)
            )


def read_snapshot(path) -> SpectralField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"bad snapshot magic {magic!r}")
        version, n, count = struct.unpack("<III", fh.read(12))
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        c = get_basis(n).zeros()
        for _ in range(count):
            k1, k2, re, im = struct.unpack("<iidd", fh.read(24))
            c[k1 + n, k2 + n] = re + 1j * im
    return SpectralField(int(n), c)
