"""Convective and damping operators with their structural inequalities.

The convective term B(u, v) = P((u.grad) v) is evaluated in divergence
form, Sum_i d_i(u_i v_j), which is exact for divergence-free u and needs
one fewer transform per component than the gradient form.  The damping
term C(u) = P(|u|^(r-1) u) and its Gateaux derivative are evaluated
pointwise on the dealiased grid.  Products of retained modes stay below
the alias limit of the default grid (M >= 4N+2), so for r in {1, 3} the
results are exact Galerkin truncations; for r = 2 the integrand is not
band-limited and the grid quadrature defines the discrete operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    SpectralField,
    TorusBasis,
    _check_same,
    sobolev_norm_sq,
)

__all__ = [
    "OperatorParams",
    "convective",
    "damping",
    "damping_derivative",
    "trilinear",
    "lp_norm",
    "monotonicity_gap",
    "local_monotonicity_residual",
    "BallRadiusError",
]


class BallRadiusError(ValueError):
    """Second argument violates the L^4-ball precondition."""


@dataclass(frozen=True)
class OperatorParams:
    """Viscosity, damping strength and absorption exponent (rho = 0)."""

    mu: float
    beta: float
    r: int

    def __post_init__(self):
        if self.r not in (1, 2, 3):
            raise ValueError(f"absorption exponent r={self.r} not in {{1, 2, 3}}")
        if self.mu <= 0.0 or self.beta <= 0.0:
            raise ValueError("mu and beta must be positive")


# -- array kernels (batched over leading dimensions) ----------------------


def _check_product_grid(basis: TorusBasis, degree: int) -> None:
    if basis.m < (degree + 1) * basis.n + 1:
        raise ValueError(
            f"grid M={basis.m} cannot dealias degree-{degree} products at N={basis.n}"
        )


def _project_vector_half(basis: TorusBasis, w1_up, w2_up) -> np.ndarray:
    c_up = w1_up * np.conj(basis.eta1_up) + w2_up * np.conj(basis.eta2_up)
    return basis.scatter(c_up)


def advect_coeffs(
    basis: TorusBasis,
    cu: np.ndarray,
    cv: np.ndarray | None = None,
    gu: np.ndarray | None = None,
) -> np.ndarray:
    """Coefficients of B(u, v); cv=None means B(u, u).

    `gu` may pass precomputed grid samples of u to save transforms.
    """
    _check_product_grid(basis, 2)
    if gu is None:
        gu = basis.to_grid(cu)
    u1, u2 = gu[..., 0, :, :], gu[..., 1, :, :]
    if cv is None:
        t = np.stack([u1 * u1, u1 * u2, u2 * u2], axis=-3)
        th = basis.forward_half(t)
        t11 = basis.read_half(th[..., 0, :, :])
        t12 = basis.read_half(th[..., 1, :, :])
        t21 = t12
        t22 = basis.read_half(th[..., 2, :, :])
    else:
        gv = basis.to_grid(cv)
        v1, v2 = gv[..., 0, :, :], gv[..., 1, :, :]
        t = np.stack([u1 * v1, u1 * v2, u2 * v1, u2 * v2], axis=-3)
        th = basis.forward_half(t)
        t11 = basis.read_half(th[..., 0, :, :])
        t12 = basis.read_half(th[..., 1, :, :])
        t21 = basis.read_half(th[..., 2, :, :])
        t22 = basis.read_half(th[..., 3, :, :])
    k1, k2 = basis.k1_up, basis.k2_up
    w1 = 1j * (k1 * t11 + k2 * t21)
    w2 = 1j * (k1 * t12 + k2 * t22)
    return _project_vector_half(basis, w1, w2)


def advect_pair_coeffs(
    basis: TorusBasis,
    cu: np.ndarray,
    cw: np.ndarray,
    gu: np.ndarray | None = None,
    gw: np.ndarray | None = None,
) -> np.ndarray:
    """Coefficients of B(u, w) + B(w, u) via the symmetric tensor u_i w_j + w_i u_j."""
    _check_product_grid(basis, 2)
    if gu is None:
        gu = basis.to_grid(cu)
    if gw is None:
        gw = basis.to_grid(cw)
    u1, u2 = gu[..., 0, :, :], gu[..., 1, :, :]
    w1, w2 = gw[..., 0, :, :], gw[..., 1, :, :]
    t = np.stack([2.0 * u1 * w1, u1 * w2 + w1 * u2, 2.0 * u2 * w2], axis=-3)
    th = basis.forward_half(t)
    t11 = basis.read_half(th[..., 0, :, :])
    t12 = basis.read_half(th[..., 1, :, :])
    t22 = basis.read_half(th[..., 2, :, :])
    k1, k2 = basis.k1_up, basis.k2_up
    a1 = 1j * (k1 * t11 + k2 * t12)
    a2 = 1j * (k1 * t12 + k2 * t22)
    return _project_vector_half(basis, a1, a2)


def damping_coeffs(
    basis: TorusBasis,
    c: np.ndarray,
    r: int,
    gu: np.ndarray | None = None,
) -> np.ndarray:
    """Coefficients of C(u) = P(|u|^(r-1) u)."""
    if r == 1:
        return np.array(c, copy=True)
    _check_product_grid(basis, min(r, 3))
    if gu is None:
        gu = basis.to_grid(c)
    u1, u2 = gu[..., 0, :, :], gu[..., 1, :, :]
    sp2 = u1 * u1 + u2 * u2
    weight = sp2 if r == 3 else np.sqrt(sp2)
    t = np.stack([weight * u1, weight * u2], axis=-3)
    th = basis.forward_half(t)
    return _project_vector_half(
        basis,
        basis.read_half(th[..., 0, :, :]),
        basis.read_half(th[..., 1, :, :]),
    )


def damping_derivative_coeffs(
    basis: TorusBasis,
    cu: np.ndarray,
    cv: np.ndarray,
    r: int,
    gu: np.ndarray | None = None,
    gv: np.ndarray | None = None,
) -> np.ndarray:
    """Coefficients of the Gateaux derivative of C at u applied to v.

    Pointwise: v for r=1; |u| v + (u.v) u/|u| for r=2 (zero where u
    vanishes); |u|^2 v + 2 (u.v) u for r=3.
    """
    if r == 1:
        return np.array(cv, copy=True)
    _check_product_grid(basis, min(r, 3))
    if gu is None:
        gu = basis.to_grid(cu)
    if gv is None:
        gv = basis.to_grid(cv)
    u1, u2 = gu[..., 0, :, :], gu[..., 1, :, :]
    v1, v2 = gv[..., 0, :, :], gv[..., 1, :, :]
    dot = u1 * v1 + u2 * v2
    sp2 = u1 * u1 + u2 * u2
    if r == 3:
        w1 = sp2 * v1 + 2.0 * dot * u1
        w2 = sp2 * v2 + 2.0 * dot * u2
    else:
        speed = np.sqrt(sp2)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(speed > 0.0, dot / speed, 0.0)
        w1 = speed * v1 + ratio * u1
        w2 = speed * v2 + ratio * u2
    t = np.stack([w1, w2], axis=-3)
    th = basis.forward_half(t)
    return _project_vector_half(
        basis,
        basis.read_half(th[..., 0, :, :]),
        basis.read_half(th[..., 1, :, :]),
    )


def inner_coeffs(c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    return np.real(np.sum(c1 * np.conj(c2), axis=(-2, -1)))


# -- field-level API -------------------------------------------------------


def convective(u: SpectralField, v: SpectralField | None = None) -> SpectralField:
    """B(u, v) = P((u.grad) v); one argument means B(u, u)."""
    if v is not None:
        _check_same(u, v)
    basis = u.basis
    cv = None if v is None else v.coeffs
    return SpectralField(u.n, advect_coeffs(basis, u.coeffs, cv))


def damping(u: SpectralField, r: int) -> SpectralField:
    """C(u) = P(|u|^(r-1) u) for r in {1, 2, 3}."""
    return SpectralField(u.n, damping_coeffs(u.basis, u.coeffs, r))


def damping_derivative(u: SpectralField, v: SpectralField, r: int) -> SpectralField:
    """Directional derivative of C at u in direction v."""
    _check_same(u, v)
    return SpectralField(u.n, damping_derivative_coeffs(u.basis, u.coeffs, v.coeffs, r))


def trilinear(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """b(u, v, w) = (B(u, v), w) under the normalized inner product."""
    _check_same(u, w)
    b = advect_coeffs(u.basis, u.coeffs, v.coeffs)
    return float(inner_coeffs(b, w.coeffs))


def lp_norm(u: SpectralField, p: float) -> float:
    """Normalized L^p norm of the pointwise speed."""
    return float(u.basis.lp_norm(u.coeffs, p))


def monotonicity_gap(u: SpectralField, v: SpectralField, r: int) -> float:
    """Defect of the damping monotonicity bound, by grid quadrature.

    Returns (C(u) - C(v), u - v)
            - 1/2 || |u|^((r-1)/2) (u-v) ||^2 - 1/2 || |v|^((r-1)/2) (u-v) ||^2,
    which is nonnegative up to round-off for r in {1, 2, 3}.
    """
    _check_same(u, v)
    basis = u.basis
    gu = basis.to_grid(u.coeffs)
    gv = basis.to_grid(v.coeffs)
    du = gu - gv
    su = basis.speed_sq(gu)
    sv = basis.speed_sq(gv)
    d2 = basis.speed_sq(du)
    wu = _speed_power(su, r - 1)
    wv = _speed_power(sv, r - 1)
    lhs = basis.grid_mean(
        (wu * gu[..., 0, :, :] - wv * gv[..., 0, :, :]) * du[..., 0, :, :]
        + (wu * gu[..., 1, :, :] - wv * gv[..., 1, :, :]) * du[..., 1, :, :]
    )
    rhs = 0.5 * basis.grid_mean(wu * d2) + 0.5 * basis.grid_mean(wv * d2)
    return float(lhs - rhs)


def _speed_power(speed_sq: np.ndarray, power: int) -> np.ndarray:
    """|u|^power from |u|^2 for integer power in {0, 1, 2}."""
    if power == 0:
        return np.ones_like(speed_sq)
    if power == 1:
        return np.sqrt(speed_sq)
    return speed_sq


def local_monotonicity_residual(
    u: SpectralField,
    v: SpectralField,
    params: OperatorParams,
    n_ball: float,
) -> float:
    """Residual of the local monotonicity bound for G = mu A + B + beta C.

    With v confined to the L^4 ball of radius n_ball, returns

        (G(u) - G(v), u - v) + 27/(32 mu^3) n_ball^4 ||u - v||^2,

    which is nonnegative up to round-off (sharp for r = 3).
    """
    _check_same(u, v)
    if lp_norm(v, 4.0) > n_ball * (1.0 + 1e-12):
        raise BallRadiusError(
            f"||v||_L4 = {lp_norm(v, 4.0):.6g} exceeds ball radius {n_ball}"
        )
    basis = u.basis
    cu, cv = u.coeffs, v.coeffs
    diff = cu - cv
    mu = params.mu
    visc = mu * sobolev_norm_sq(diff, basis, 0.5)
    conv = inner_coeffs(
        advect_coeffs(basis, cu) - advect_coeffs(basis, cv), diff
    )
    damp = inner_coeffs(
        damping_coeffs(basis, cu, params.r) - damping_coeffs(basis, cv, params.r), diff
    )
    comp = 27.0 / (32.0 * mu**3) * n_ball**4 * inner_coeffs(diff, diff)
    return float(visc + conv + params.beta * damp + comp)
