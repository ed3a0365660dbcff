"""Diagonal noise operator on the divergence-free Fourier basis.

The operator G acts mode by mode, G e_k = sigma_k e_k.  Admissible
spectra sit in the regularity window

    c * lam_k^(-2 alpha) <= sigma_k <= C * lam_k^(-(1/2 + eps)),

with (r-1)/(2r) < alpha < 1/2 for r in {2, 3}, 1/4 < alpha < 1/2 for
r = 1, and 0 < eps <= 2 alpha - 1/2.  The canonical choice is
sigma_k = lam_k^(-2 alpha), for which both window inequalities hold
with unit constants.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .fields import SpectralField, TorusBasis, get_basis

__all__ = [
    "NoiseSpectrum",
    "AdmissibilityError",
    "admissible_alpha_window",
    "build_diagonal_spectrum",
    "custom_spectrum",
    "trace_q",
    "operator_norm_q",
    "lambda0_threshold",
    "sample_increment",
    "spectrum_to_csv",
]


class AdmissibilityError(ValueError):
    """Noise regularity parameters outside the admissible window."""


def admissible_alpha_window(r: int) -> tuple[float, float]:
    """Open interval of admissible alpha for absorption exponent r."""
    if r not in (1, 2, 3):
        raise ValueError(f"absorption exponent r={r} not in {{1, 2, 3}}")
    return (max(0.25, (r - 1) / (2.0 * r)), 0.5)


@dataclass(frozen=True)
class NoiseSpectrum:
    """Per-mode amplitudes sigma_k >= 0 with their regularity exponents."""

    n: int
    alpha: float
    eps: float
    sigma: np.ndarray
    relaxed: bool = field(default=False)

    @property
    def basis(self) -> TorusBasis:
        return get_basis(self.n)

    def sigma_at(self, k1: int, k2: int) -> float:
        return float(self.sigma[k1 + self.n, k2 + self.n])


def _validate_alpha_eps(alpha: float, eps: float, r: int) -> None:
    lo, hi = admissible_alpha_window(r)
    if not alpha > lo:
        raise AdmissibilityError(
            f"alpha={alpha} violates the lower admissibility bound "
            f"alpha > {lo:.6g} for r={r}"
        )
    if not alpha < hi:
        raise AdmissibilityError(
            f"alpha={alpha} violates the upper admissibility bound alpha < 1/2"
        )
    if not 0.0 < eps <= 2.0 * alpha - 0.5 + 1e-15:
        raise AdmissibilityError(
            f"eps={eps} outside (0, 2*alpha - 1/2] = (0, {2 * alpha - 0.5:.6g}]"
        )


def build_diagonal_spectrum(
    n: int, alpha: float, r: int, eps: float | None = None
) -> NoiseSpectrum:
    """Canonical admissible spectrum sigma_k = lam_k^(-2 alpha)."""
    if eps is None:
        eps = 2.0 * alpha - 0.5
    _validate_alpha_eps(alpha, eps, r)
    basis = get_basis(n)
    sigma = np.zeros_like(basis.lam)
    sigma[basis.mask] = basis.lam[basis.mask] ** (-2.0 * alpha)
    return NoiseSpectrum(n=n, alpha=alpha, eps=eps, sigma=sigma)


def custom_spectrum(
    n: int,
    sigma: np.ndarray,
    alpha: float,
    r: int,
    eps: float | None = None,
    c_lo: float = 1.0,
    c_hi: float = 1.0,
    relaxed: bool = False,
) -> NoiseSpectrum:
    """Wrap a user-provided amplitude table, checking the decay window.

    With ``relaxed=True`` the window check is skipped and only basic
    sanity (nonnegativity, zero mean mode) is enforced.
    """
    basis = get_basis(n)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != basis.lam.shape:
        raise ValueError(f"sigma table shape {sigma.shape} does not match N={n}")
    if np.any(sigma < 0.0):
        raise AdmissibilityError("sigma_k must be nonnegative")
    if sigma[n, n] != 0.0:
        raise AdmissibilityError("mean-mode amplitude must be zero")
    if eps is None:
        eps = 2.0 * alpha - 0.5
    if relaxed:
        return NoiseSpectrum(n=n, alpha=alpha, eps=eps, sigma=sigma, relaxed=True)
    _validate_alpha_eps(alpha, eps, r)
    lam = basis.lam[basis.mask]
    s = sigma[basis.mask]
    lower = c_lo * lam ** (-2.0 * alpha)
    upper = c_hi * lam ** (-(0.5 + eps))
    tol = 1.0 + 1e-12
    if np.any(s * tol < lower):
        k = np.argmax(lower - s)
        raise AdmissibilityError(
            f"lower window violated: sigma={s[k]:.6g} < {c_lo}*lam^(-2 alpha)="
            f"{lower[k]:.6g} at lam={lam[k]:.6g}"
        )
    if np.any(s > upper * tol):
        k = np.argmax(s - upper)
        raise AdmissibilityError(
            f"upper window violated: sigma={s[k]:.6g} > {c_hi}*lam^(-(1/2+eps))="
            f"{upper[k]:.6g} at lam={lam[k]:.6g}"
        )
    return NoiseSpectrum(n=n, alpha=alpha, eps=eps, sigma=sigma)


def trace_q(spectrum: NoiseSpectrum) -> float:
    """Tr(G G*) over retained modes: sum_k sigma_k^2."""
    return float(np.sum(spectrum.sigma**2))


def operator_norm_q(spectrum: NoiseSpectrum) -> float:
    """Operator norm of Q = G G*: max_k sigma_k^2."""
    return float(np.max(spectrum.sigma**2))


def lambda0_threshold(spectrum: NoiseSpectrum, mu: float) -> float:
    """Upper limit mu*lam_1/(2 ||Q||) for the exponential-moment rate."""
    norm_q = operator_norm_q(spectrum)
    if norm_q == 0.0:
        return float("inf")
    return mu * 1.0 / (2.0 * norm_q)


def sample_increment(
    spectrum: NoiseSpectrum, dt: float, rng: np.random.Generator
) -> SpectralField:
    """One Wiener increment G dW over a step dt.

    Independent complex Gaussians per conjugate mode pair with per-mode
    variance sigma_k^2 dt; Hermitian symmetry holds by construction.
    """
    if dt < 0.0:
        raise ValueError("dt must be nonnegative")
    basis = spectrum.basis
    if dt == 0.0:
        return SpectralField(spectrum.n, basis.zeros())
    xi = basis.hermitian_normal(rng)
    return SpectralField(spectrum.n, np.sqrt(dt) * spectrum.sigma * xi)


def spectrum_to_csv(spectrum: NoiseSpectrum, path) -> None:
    """Dump rows k1,k2,sigma for every retained mode."""
    basis = spectrum.basis
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k1", "k2", "sigma"])
        for i in range(basis.k_side):
            for j in range(basis.k_side):
                if basis.mask[i, j]:
                    writer.writerow(
                        [i - basis.n, j - basis.n, repr(float(spectrum.sigma[i, j]))]
                    )
