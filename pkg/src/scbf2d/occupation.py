"""Occupation measures, ergodic time averages and hitting-time statistics.

The occupation measure of a trajectory is made concrete by a fixed
coarse partition: the energies of the m lowest spectral shells, each
binned logarithmically.  Observable averages accumulate alongside as
running time integrals, and compact-set visits are tracked through the
enstrophy radius ||A^(1/2) u||.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import TorusBasis, get_basis
from .noise import NoiseSpectrum, operator_norm_q, trace_q

__all__ = [
    "OccupationAccumulator",
    "shell_masks",
    "shell_energies",
    "HittingRecord",
    "hitting_time",
    "exp_hitting_moment",
    "recurrence_constant",
    "choose_compact_radius",
    "occupation_csv",
    "hitting_json",
]

DEFAULT_BIN_LO = 1e-12
DEFAULT_BIN_HI = 1e3


def shell_masks(basis: TorusBasis, m_shells: int) -> np.ndarray:
    """Boolean masks of the m lowest shells, shell j = {k: round(|k|) = j}."""
    radius = np.rint(np.sqrt(basis.lam)).astype(int)
    return np.stack([(radius == j + 1) & basis.mask for j in range(m_shells)])


def shell_energies(coeffs: np.ndarray, basis: TorusBasis, masks: np.ndarray) -> np.ndarray:
    """Energy per shell, shape (..., m_shells)."""
    amp2 = np.abs(coeffs) ** 2
    return np.stack(
        [np.sum(amp2 * m, axis=(-2, -1)) for m in masks], axis=-1
    )


@dataclass
class OccupationAccumulator:
    """Running time integrals, shell-energy histograms and hitting records.

    The histogram rows are per-shell occupation measures: row j carries
    total mass t, so row/t is a probability vector over the log bins.
    Merging two accumulators adds every field, which makes ensemble
    reduction order-independent up to float association.
    """

    n: int
    m_shells: int = 4
    n_bins: int = 32
    bin_lo: float = DEFAULT_BIN_LO
    bin_hi: float = DEFAULT_BIN_HI
    observables: tuple[str, ...] = ("energy", "enstrophy")
    time: float = 0.0
    integrals: dict = field(default_factory=dict)
    histogram: np.ndarray | None = None

    def __post_init__(self):
        if self.histogram is None:
            self.histogram = np.zeros((self.m_shells, self.n_bins))
        if not self.integrals:
            self.integrals = {name: 0.0 for name in self.observables}
        self._edges = np.logspace(
            math.log10(self.bin_lo), math.log10(self.bin_hi), self.n_bins + 1
        )
        self._basis = get_basis(self.n)
        self._masks = shell_masks(self._basis, self.m_shells)

    def _evaluate(self, name: str, coeffs: np.ndarray) -> float:
        amp2 = np.abs(coeffs) ** 2
        if name == "energy":
            return float(np.sum(amp2))
        if name == "enstrophy":
            return float(np.sum(self._basis.lam * amp2))
        raise KeyError(f"unknown observable {name!r}")

    def accumulate(self, coeffs: np.ndarray, dt: float) -> None:
        """Add one sample held for a duration dt."""
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        self.time += dt
        for name in self.observables:
            self.integrals[name] += self._evaluate(name, coeffs) * dt
        energies = shell_energies(coeffs, self._basis, self._masks)
        idx = np.clip(
            np.searchsorted(self._edges, energies, side="right") - 1,
            0,
            self.n_bins - 1,
        )
        for j in range(self.m_shells):
            self.histogram[j, idx[j]] += dt

    def accumulate_series(self, energies: np.ndarray, dt: float,
                          integrals: dict[str, float] | None = None) -> None:
        """Bulk update from precomputed shell energies (n_samples, m_shells)."""
        n_samples = energies.shape[0]
        if n_samples == 0:
            return
        self.time += dt * n_samples
        idx = np.clip(
            np.searchsorted(self._edges, energies, side="right") - 1,
            0,
            self.n_bins - 1,
        )
        for j in range(self.m_shells):
            self.histogram[j] += dt * np.bincount(idx[:, j], minlength=self.n_bins)
        if integrals:
            for name, val in integrals.items():
                self.integrals[name] = self.integrals.get(name, 0.0) + val

    def averages(self) -> dict[str, float]:
        return {k: v / self.time for k, v in self.integrals.items()}

    def measure(self) -> np.ndarray:
        """Per-shell occupation probabilities, shape (m_shells, n_bins)."""
        return self.histogram / self.time

    def merge(self, other: "OccupationAccumulator") -> "OccupationAccumulator":
        if (self.n, self.m_shells, self.n_bins) != (other.n, other.m_shells, other.n_bins):
            raise ValueError("accumulator layouts differ")
        out = OccupationAccumulator(
            self.n, self.m_shells, self.n_bins, self.bin_lo, self.bin_hi,
            self.observables,
        )
        out.time = self.time + other.time
        out.histogram = self.histogram + other.histogram
        for name in set(self.integrals) | set(other.integrals):
            out.integrals[name] = self.integrals.get(name, 0.0) + other.integrals.get(name, 0.0)
        return out


# -- hitting times ----------------------------------------------------------


@dataclass(frozen=True)
class HittingRecord:
    """First entry times into {||A^(1/2) u|| <= M}, right-censored at the horizon."""

    tau: float
    tau_censored: bool
    tau_one: float
    tau_one_censored: bool
    radius: float
    horizon: float


def hitting_time(times: np.ndarray, enstrophy_sq: np.ndarray, radius: float) -> HittingRecord:
    """Grid hitting times of the compact set from one recorded trajectory.

    `enstrophy_sq` holds ||A^(1/2) u(t)||^2 on the same grid as `times`;
    tau is the first grid time inside the set, tau_one the first with
    t >= 1.
    """
    inside = enstrophy_sq <= radius**2
    horizon = float(times[-1])
    hit = np.nonzero(inside)[0]
    if hit.size:
        tau, cens = float(times[hit[0]]), False
    else:
        tau, cens = horizon, True
    hit1 = np.nonzero(inside & (times >= 1.0))[0]
    if hit1.size:
        tau1, cens1 = float(times[hit1[0]]), False
    else:
        tau1, cens1 = max(horizon, 1.0), True
    return HittingRecord(tau, cens, tau1, cens1, radius, horizon)


def exp_hitting_moment(
    records: list[HittingRecord], lam: float, use_tau_one: bool = False
) -> dict:
    """Monte Carlo estimate of E[exp(lam tau)] with censoring reported.

    Censored trajectories never enter the estimator; with censoring
    present the estimate is a lower bound of the true moment.
    """
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    taus = np.array(
        [r.tau_one if use_tau_one else r.tau for r in records], dtype=float
    )
    cens = np.array(
        [r.tau_one_censored if use_tau_one else r.tau_censored for r in records]
    )
    kept = taus[~cens]
    n_censored = int(cens.sum())
    if kept.size == 0:
        raise ValueError("all trajectories censored; no estimate possible")
    vals = np.exp(lam * kept)
    est = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return {
        "lam": lam,
        "estimate": est,
        "stderr": stderr,
        "n": int(vals.size),
        "n_censored": n_censored,
    }


def recurrence_constant(
    radius: float,
    lam0: float,
    spectrum: NoiseSpectrum,
    mu: float,
    f_norm: float,
) -> float:
    """mu M^2/2 - Tr(Q) - ||f||^2/(mu lam_1 - 2 ||Q|| lam0), with lam_1 = 1."""
    denom = mu * 1.0 - 2.0 * operator_norm_q(spectrum) * lam0
    if denom <= 0.0:
        raise ValueError("lam0 at or above the exponential-moment threshold")
    return mu * radius**2 / 2.0 - trace_q(spectrum) - f_norm**2 / denom


def choose_compact_radius(
    lam: float,
    lam0: float,
    spectrum: NoiseSpectrum,
    mu: float,
    f_norm: float,
    margin: float = 1.0,
) -> float:
    """Smallest M with lam0 * C(M) - lam >= margin (default: equality at 1)."""
    denom = mu * 1.0 - 2.0 * operator_norm_q(spectrum) * lam0
    if denom <= 0.0 or lam0 <= 0.0:
        raise ValueError("need 0 < lam0 below the exponential-moment threshold")
    c_target = (lam + margin) / lam0
    m_sq = (2.0 / mu) * (c_target + trace_q(spectrum) + f_norm**2 / denom)
    return math.sqrt(m_sq)


# -- exports ----------------------------------------------------------------


def occupation_csv(acc: OccupationAccumulator, path) -> None:
    """Histogram rows plus observable averages, one CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "key", "bin", "value"])
        for name, avg in sorted(acc.averages().items()):
            writer.writerow(["average", name, "", repr(avg)])
        measure = acc.measure()
        for j in range(acc.m_shells):
            for b in range(acc.n_bins):
                writer.writerow(["histogram", f"shell{j + 1}", b, repr(float(measure[j, b]))])


def hitting_json(records: list[HittingRecord], moments: list[dict], path) -> None:
    payload = {
        "n_records": len(records),
        "radius": records[0].radius if records else None,
        "horizon": records[0].horizon if records else None,
        "tau": [r.tau for r in records],
        "tau_censored": [r.tau_censored for r in records],
        "tau_one": [r.tau_one for r in records],
        "tau_one_censored": [r.tau_one_censored for r in records],
        "moments": moments,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
