"""Random characteristics: finite tables, exact moments, star transforms.

A characteristic assigns to an individual of type j at age k the scalar

    value(k, j) = base(k, j) + coeff(k) . (l - A e_j) + noise(k, j)

where ``l`` is the individual's own offspring column, ``coeff(k)`` is a
deterministic 1 x J row, and ``noise(k, j)`` is an independent draw from a
finite table.  The counted process sums each individual's value at its age.
This family is closed under every transform the limit theory needs and keeps
the simulator exact under multinomial aggregation: the value depends on the
individual only through (type, age, own column, private noise).

The star transform of a deterministic characteristic produces the centered
characteristic

    phi*(k) = sum_{l >= 0} phi(k - 1 - l) A^l (L - A),

whose counted process recenters ``Z_n^phi`` at its mean pathwise.  Projected
variants replace ``A^l`` by restricted powers; see ``star_transform``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .model import BranchingModel
from .spectral import SpectralData, projected_power

__all__ = [
    "NoiseLaw",
    "Characteristic",
    "StarCharacteristic",
    "Phi1Characteristic",
    "make_indicator_characteristic",
    "make_table_characteristic",
    "characteristic_mean",
    "characteristic_variance",
    "star_transform",
    "make_phi1",
    "expected_process",
    "assumption_sums",
]

_MAX_TAIL_ITER = 10_000


@dataclass(frozen=True)
class NoiseLaw:
    """Finite law of the independent additive noise at one (age, type) cell."""

    probs: tuple[float, ...]
    values: tuple[complex, ...]

    def __post_init__(self):
        if len(self.probs) != len(self.values):
            raise ValueError("noise law: probs and values length mismatch")
        if abs(sum(self.probs) - 1.0) > 1e-12:
            raise ValueError(f"noise law: probabilities sum to {sum(self.probs)!r}, not 1")

    def mean(self) -> complex:
        return complex(sum(p * v for p, v in zip(self.probs, self.values)))

    def variance(self) -> float:
        m = self.mean()
        return float(sum(p * abs(v - m) ** 2 for p, v in zip(self.probs, self.values)))


def _freeze_rows(rows: Mapping[int, np.ndarray] | None, J: int, what: str) -> dict:
    out = {}
    if rows:
        for k, row in rows.items():
            r = np.asarray(row, dtype=complex).reshape(-1)
            if r.shape != (J,):
                raise ValueError(f"{what}[{k}]: expected a row of length {J}")
            if np.any(r != 0):
                r = r.copy()
                r.flags.writeable = False
                out[int(k)] = r
    return out


@dataclass(frozen=True, eq=False)
class Characteristic:
    """Finite-table random characteristic (see module docstring)."""

    J: int
    base: dict = field(default_factory=dict)
    coeff: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "base", _freeze_rows(self.base, self.J, "base"))
        object.__setattr__(self, "coeff", _freeze_rows(self.coeff, self.J, "coeff"))
        nz = {}
        for key, law in dict(self.noise).items():
            k, j = key
            if not (0 <= j < self.J):
                raise ValueError(f"noise[{key}]: type index out of range")
            if not isinstance(law, NoiseLaw):
                law = NoiseLaw(tuple(law[0]), tuple(law[1]))
            nz[(int(k), int(j))] = law
        object.__setattr__(self, "noise", nz)

    # -- window bookkeeping -------------------------------------------------
    @property
    def value_keys(self) -> tuple[int, ...]:
        ks = set(self.base) | set(self.coeff) | {k for (k, _) in self.noise}
        return tuple(sorted(ks))

    @property
    def coeff_k_min(self) -> int | None:
        return min(self.coeff) if self.coeff else None

    @property
    def static_k_min(self) -> int | None:
        ks = set(self.base) | {k for (k, _) in self.noise}
        return min(ks) if ks else None

    @property
    def is_deterministic(self) -> bool:
        return not self.coeff and not self.noise

    @property
    def is_real(self) -> bool:
        rows = list(self.base.values()) + list(self.coeff.values())
        if any(np.any(np.abs(r.imag) > 0) for r in rows):
            return False
        return all(
            all(abs(complex(v).imag) == 0 for v in law.values) for law in self.noise.values()
        )

    # -- exact moments ------------------------------------------------------
    def mean(self, k: int) -> np.ndarray:
        """E phi(k) as a length-J row (the coeff part is centered by design)."""
        row = np.zeros(self.J, dtype=complex)
        if k in self.base:
            row = row + self.base[k]
        for (kk, j), law in self.noise.items():
            if kk == k:
                row[j] += law.mean()
        return row

    def mean_table(self) -> dict:
        out = {}
        for k in self.value_keys:
            row = self.mean(k)
            if np.any(row != 0):
                out[k] = row
        return out

    def variance(self, k: int, model: BranchingModel) -> np.ndarray:
        """Var[phi(k)] e_j per type, as E|X - EX|^2 (complex convention)."""
        var = np.zeros(self.J, dtype=float)
        c = self.coeff.get(k)
        if c is not None:
            for j in range(self.J):
                var[j] += float(np.real(c @ model.covs[j] @ c.conj()))
        for (kk, j), law in self.noise.items():
            if kk == k:
                var[j] += law.variance()
        return var

    def column_covariance(self, k: int, w: np.ndarray, j: int, model: BranchingModel) -> complex:
        """Cov(phi(k) e_j, w . L^(j)) — exact, from the enumerated column covariance."""
        c = self.coeff.get(k)
        if c is None:
            return 0.0 + 0.0j
        w = np.asarray(w, dtype=complex)
        return complex(c @ model.covs[j] @ w.conj())

    def scaled(self, factor: complex) -> "Characteristic":
        """The characteristic ``factor * phi`` (all tables scaled)."""
        return Characteristic(
            J=self.J,
            base={k: factor * r for k, r in self.base.items()},
            coeff={k: factor * r for k, r in self.coeff.items()},
            noise={
                key: NoiseLaw(law.probs, tuple(factor * v for v in law.values))
                for key, law in self.noise.items()
            },
            label=self.label,
        )


@dataclass(frozen=True, eq=False)
class Phi1Characteristic(Characteristic):
    """Martingale-gap characteristic with its truncation certificate."""

    k_low: int = 0
    discarded_mass: float = 0.0


@dataclass(frozen=True, eq=False)
class StarCharacteristic:
    """A materialized star transform plus its summability certificate.

    ``sum_sq`` is the partial sum of ``rho^{-k} sum_j u_j Var[R(k)(L - A e_j)]``
    over the materialized window and ``sum_sq_ratio`` the last consecutive-term
    ratio: a ratio < 1 certifies a geometric tail, a ratio >= 1 flags honest
    divergence (which does occur for characteristics with non-summable mean
    growth; the transform itself stays exact on any finite window).
    """

    characteristic: Characteristic
    selector: int | None
    k_lo: int
    k_hi: int
    sum_sq: float
    sum_sq_ratio: float
    sum_sq_converged: bool
    discarded_mass: float

    @property
    def rows(self) -> dict:
        return self.characteristic.coeff


def make_indicator_characteristic(row) -> Characteristic:
    """phi(k) = row * 1{k = 0}, so that Z_n^phi = row . Z_n."""
    row = np.asarray(row, dtype=complex).reshape(-1)
    return Characteristic(J=row.shape[0], base={0: row}, label="indicator")


def make_table_characteristic(J, base=None, coeff=None, noise=None, label="table") -> Characteristic:
    return Characteristic(J=J, base=base or {}, coeff=coeff or {}, noise=noise or {}, label=label)


def characteristic_mean(phi: Characteristic, k: int) -> np.ndarray:
    return phi.mean(k)


def characteristic_variance(phi: Characteristic, k: int, model: BranchingModel) -> np.ndarray:
    return phi.variance(k, model)


def _summability_sum(rows: dict, S: SpectralData, model: BranchingModel, tail_keys) -> tuple[float, float, bool]:
    """Partial sum of rho^{-k} u-weighted variances plus a tail-ratio certificate."""
    total = 0.0
    terms = {}
    for k, row in rows.items():
        var_u = 0.0
        for j in range(model.J):
            var_u += float(S.u[j]) * float(np.real(row @ model.covs[j] @ row.conj()))
        t = S.rho ** (-k) * var_u
        terms[k] = t
        total += t
    ratio = 0.0
    tail = [k for k in tail_keys if terms.get(k, 0.0) > 0.0]
    if len(tail) >= 2:
        ratio = terms[tail[-1]] / terms[tail[-2]]
    return total, ratio, bool(ratio < 1.0)


def star_transform(
    phi: Characteristic,
    S: SpectralData,
    projection_selector: int | None = None,
    model: BranchingModel | None = None,
    n_max: int = 40,
) -> StarCharacteristic:
    """Star transform of a deterministic characteristic.

    ``projection_selector`` chooses the variant:

    * ``None`` — the plain transform ``R(k) = sum_{l>=0} Ephi(k-1-l) A^l``;
      satisfies the pathwise recentering ``Z_n^{phi*} = Z_n^phi - E Z_n^phi``.
    * ``1`` or ``2`` — the piecewise projected variant:
      ``R(k) = sum_{l>=0} Ephi(k-l-1) pi_i A^l`` for k <= 0 and
      ``R(k) = -sum_{l<=-1} Ephi(k-l-1) pi_i A^l`` for k > 0 (negative powers
      act on the invariant subspace, where A is invertible).  For a finitely
      supported mean table both branches are finite sums.
    * ``3`` — ``R(k) = sum_{l>=0} Ephi(k-1-l) pi3 A^l`` for all k.

    All sums are exact (finite); ``n_max`` caps the materialized ages for the
    variants whose support is unbounded above.  Every produced characteristic
    has mean zero identically, by construction (coeff-only tables).
    """
    if not phi.is_deterministic:
        raise ValueError("star_transform requires a deterministic characteristic")
    mt = phi.mean_table()
    if not mt:
        return StarCharacteristic(
            characteristic=Characteristic(J=phi.J, label="star"),
            selector=projection_selector,
            k_lo=0,
            k_hi=0,
            sum_sq=0.0,
            sum_sq_ratio=0.0,
            sum_sq_converged=True,
            discarded_mass=0.0,
        )
    supp = sorted(mt)
    k_min, k_max = supp[0], supp[-1]
    J = phi.J
    rows: dict[int, np.ndarray] = {}

    if projection_selector is None:
        powers = [np.eye(J, dtype=complex)]
        for _ in range(max(0, n_max - 1 - k_min)):
            powers.append(powers[-1] @ S.A.astype(complex))
        for k in range(k_min + 1, n_max + 1):
            row = np.zeros(J, dtype=complex)
            for m in supp:
                l = k - 1 - m
                if l >= 0:
                    row = row + mt[m] @ powers[l]
            if np.any(row != 0):
                rows[k] = row
        tail_keys = sorted(rows)
    elif projection_selector in (1, 2):
        i = projection_selector
        # k <= 0 rows can start at k_min + 1; k > 0 rows can start at 1
        # whenever the mean table has support at ages >= k.
        for k in range(min(k_min + 1, 1), max(k_max, 0) + 1):
            row = np.zeros(J, dtype=complex)
            if k <= 0:
                for m in supp:
                    l = k - 1 - m
                    if l >= 0:
                        row = row + mt[m] @ projected_power(S, i, l)
            else:
                for m in supp:
                    l = k - 1 - m
                    if l <= -1:
                        row = row - mt[m] @ projected_power(S, i, l)
            if np.any(row != 0):
                rows[k] = row
        tail_keys = []  # finite window: nothing to certify
    elif projection_selector == 3:
        for k in range(k_min + 1, n_max + 1):
            row = np.zeros(J, dtype=complex)
            for m in supp:
                l = k - 1 - m
                if l >= 0:
                    row = row + mt[m] @ projected_power(S, 3, l)
            if np.any(row != 0):
                rows[k] = row
        tail_keys = sorted(rows)
    else:
        raise ValueError(f"projection_selector must be None, 1, 2 or 3, got {projection_selector!r}")

    sum_sq = float("nan")
    ratio = 0.0
    converged = True
    if model is not None:
        sum_sq, ratio, converged = _summability_sum(rows, S, model, tail_keys)

    ks = sorted(rows) or [0]
    return StarCharacteristic(
        characteristic=Characteristic(J=J, coeff=rows, label=f"star[{projection_selector}]"),
        selector=projection_selector,
        k_lo=ks[0],
        k_hi=ks[-1],
        sum_sq=sum_sq,
        sum_sq_ratio=ratio,
        sum_sq_converged=converged,
        discarded_mass=0.0,
    )


def make_phi1(
    S: SpectralData,
    x1: np.ndarray,
    model: BranchingModel | None = None,
    eps_tail: float = 1e-14,
    k_min: int | None = None,
) -> Phi1Characteristic:
    """The martingale-gap characteristic, premultiplied by ``x1``.

    ``phi1(k) = x1 A1^{k-1} pi1 (L - A)`` for k <= 0.  Counted over the
    N-truncated window ``[n - N + 1, 0]`` it reproduces
    ``x1 A1^n (What1_N - What1_n)`` exactly on every path (telescoping over
    the generation increments); with the full tail it is the gap to the
    martingale limit itself.

    The infinite tail is truncated at the first k where the term's weighted
    variance contribution ``rho^{-k} |coeff(k)|^2 max_j |Cov L^(j)|`` drops
    below ``eps_tail`` (geometric certificate reported as ``discarded_mass``);
    passing ``k_min`` forces a hard window ``[k_min, 0]`` instead.
    """
    x1 = np.asarray(x1, dtype=complex).reshape(-1)
    J = x1.shape[0]
    cov_scale = 1.0
    if model is not None:
        cov_scale = max(1e-300, max(float(np.linalg.norm(c, 2)) for c in model.covs))
    row = x1 @ projected_power(S, 1, -1)  # A1^{k-1} at k = 0
    if not np.any(np.abs(row) > 0):
        return Phi1Characteristic(J=J, label="phi1", k_low=0, discarded_mass=0.0)

    step_back = S.step(1, -1)
    coeff: dict[int, np.ndarray] = {}
    k = 0
    prev_term = None
    ratio = 0.0
    while True:
        term = S.rho ** (-k) * float(np.linalg.norm(row) ** 2) * cov_scale
        if prev_term is not None and prev_term > 0:
            ratio = term / prev_term
        if k_min is not None:
            if k < k_min:
                break
        elif k < 0 and term < eps_tail:
            break
        coeff[k] = row
        prev_term = term
        row = row @ step_back
        k -= 1
        if -k > _MAX_TAIL_ITER:
            raise ArithmeticError("phi1 tail did not reach the truncation threshold")
    if ratio <= 0.0 or ratio >= 1.0:
        # fall back to the spectral bound rho / s1^2 < 1
        ratio = min(0.5, S.rho ** (-S.delta)) if S.delta > 0 else 0.5
    last_term = S.rho ** (-k) * float(np.linalg.norm(row) ** 2) * cov_scale
    discarded = last_term / max(1e-300, 1.0 - ratio)
    return Phi1Characteristic(
        J=J,
        coeff=coeff,
        label="phi1",
        k_low=min(coeff) if coeff else 0,
        discarded_mass=float(discarded),
    )


def expected_process(phi: Characteristic, model: BranchingModel, n: int, z0=None) -> complex:
    """E Z_n^phi = sum_g E phi(n - g) A^g Z_0, exact for finite mean tables."""
    mt = phi.mean_table()
    if not mt:
        return 0.0 + 0.0j
    if z0 is None:
        z0 = model.z0()
    ez = np.asarray(z0, dtype=float)
    total = 0.0 + 0.0j
    g_max = n - min(mt)
    for g in range(0, max(g_max, -1) + 1):
        k = n - g
        row = mt.get(k)
        if row is not None:
            total += complex(row @ ez)
        if g < g_max:
            ez = model.A @ ez
    return total


def assumption_sums(phi: Characteristic, S: SpectralData, model: BranchingModel) -> dict:
    """The standing-assumption sums over the characteristic's window.

    Records ``sum_k |E phi(k)| (rho^{-k} + theta^{-k})`` and
    ``sum_k |Var phi(k)| rho^{-k}``; both are finite for finite tables.
    """
    mean_sum = 0.0
    var_sum = 0.0
    for k in phi.value_keys:
        m = float(np.linalg.norm(phi.mean(k)))
        var = float(np.linalg.norm(phi.variance(k, model)))
        mean_sum += m * (S.rho ** (-k) + S.theta ** (-k))
        var_sum += var * S.rho ** (-k)
    return {"mean_weighted_sum": mean_sum, "variance_weighted_sum": var_sum}
