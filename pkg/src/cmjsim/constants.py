"""Limit constants of the counted process, computed exactly from model data.

Everything here reduces to finite linear algebra on the mean matrix plus the
enumerated column covariances:

* ``x1``/``x2`` — the rows that premultiply the supercritical martingale term
  and the critical deterministic term in the recentered process.
* ``sigma_l`` — the critical variance ladder; the largest index with a
  nonvanishing entry (``l_star``) decides the polynomial factor in the
  case-ii normalization ``n^{l*+1/2} rho^{n/2}``.
* ``B(k)`` — the centering row of the compensator characteristic; for a
  finitely supported mean table every branch is an exact finite sum.
* ``sigma2`` — the case-i variance, a two-sided series with geometric tails
  (ratio rho/s1^2 below, theta^2/rho above); partial sums are monotone
  because every term is a nonnegative weighted variance.
* ``sigma_star2`` — the same quantity reached through the direct row-power
  route, kept as an independent implementation so the two paths can be
  compared rather than collapsed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Mapping

import numpy as np

from .characteristics import Characteristic, assumption_sums, make_indicator_characteristic
from .model import BranchingModel
from .spectral import SpectralData, projected_power

__all__ = [
    "TheoreticalConstants",
    "compute_x1_x2",
    "compute_sigma_l",
    "compute_sigma_l_table",
    "find_l_star",
    "compute_B",
    "compute_sigma2",
    "compute_sigma_star2",
    "compute_constants",
]

L_STAR_TOL = 1e-12
_MAX_WINDOW = 10_000


@dataclass(frozen=True)
class TheoreticalConstants:
    """All limit constants for one (model, characteristic) pair."""

    x1: np.ndarray
    x2: np.ndarray
    sigma_l: tuple[float, ...]
    l_star: int | None
    sigma2: float
    sigma2_error: float
    sigma_star2: float | None
    sigma_star2_error: float | None
    B_table: dict
    B_window: tuple[int, int]
    case: str  # "i", "ii" or "degenerate"
    sigma_case2: float
    notes: dict = field(default_factory=dict)


def _as_mean_table(source, J: int | None = None) -> dict:
    if isinstance(source, Characteristic):
        return source.mean_table()
    if isinstance(source, Mapping):
        return {int(k): np.asarray(row, dtype=complex).reshape(-1) for k, row in source.items()}
    raise TypeError("expected a Characteristic or a mean table mapping")


def compute_x1_x2(source, S: SpectralData) -> tuple[np.ndarray, np.ndarray]:
    """x_i = sum_k E phi(k) pi_i A_i^{-k}; for an age-0 indicator row a this is
    (a pi1, a pi2)."""
    mt = _as_mean_table(source)
    J = S.J
    x1 = np.zeros(J, dtype=complex)
    x2 = np.zeros(J, dtype=complex)
    for k, row in mt.items():
        x1 = x1 + row @ projected_power(S, 1, -k)
        x2 = x2 + row @ projected_power(S, 2, -k)
    return x1, x2


def compute_sigma_l(x2: np.ndarray, S: SpectralData, model: BranchingModel, l: int) -> float:
    """Critical variance at ladder rung l:

        rho^{-(l+1)} / ((2l+1) (l!)^2) * sum_{|lambda|^2 = rho}
            sum_j u_j | x2 N_lambda^l pi_lambda |_{C_j}^2,

    with N_lambda the nilpotent part of the cluster at lambda.  Exact finite
    linear algebra (the nilpotent powers terminate)."""
    x2 = np.asarray(x2, dtype=complex).reshape(-1)
    total = 0.0
    for cl in S.clusters:
        if cl.label != "critical":
            continue
        row = x2 @ cl.projection
        lam = cl.eigenvalue
        for _ in range(l):
            row = row @ (S.A - lam * np.eye(S.J)) @ cl.projection
        for j in range(model.J):
            total += float(S.u[j]) * float(np.real(row @ model.covs[j] @ row.conj()))
    scale = S.rho ** (-(l + 1)) / ((2 * l + 1) * factorial(l) ** 2)
    return scale * total


def compute_sigma_l_table(x2: np.ndarray, S: SpectralData, model: BranchingModel) -> tuple[float, ...]:
    """sigma_l^2 for l = 0..J (entries beyond the nilpotency index are exactly 0)."""
    return tuple(compute_sigma_l(x2, S, model, l) for l in range(S.J + 1))


def find_l_star(sigma_l: tuple[float, ...], tol: float = L_STAR_TOL) -> int | None:
    """Largest l with sigma_l^2 above tol, or None when the whole ladder vanishes."""
    hits = [l for l, v in enumerate(sigma_l) if v > tol]
    return max(hits) if hits else None


def compute_B(source, S: SpectralData, k: int, eps_tail: float = 1e-14) -> np.ndarray:
    """Centering row B(k) = sum_l E phi(k-l-1) A^l P(k,l), where the piecewise
    projector P picks -pi1 on l < 0 and pi2 + pi3 on l >= 0 when k <= 0, and
    -(pi1 + pi2) on l < 0 and pi3 on l >= 0 when k > 0.  Negative powers act
    on the corresponding invariant subspace.  For a finite mean table every
    branch is a finite sum, so ``eps_tail`` is unused (kept for signature
    stability)."""
    mt = _as_mean_table(source)
    row = np.zeros(S.J, dtype=complex)
    for m, phi_row in mt.items():
        l = k - 1 - m
        if k <= 0:
            if l < 0:
                row = row - phi_row @ projected_power(S, 1, l)
            else:
                row = row + phi_row @ (projected_power(S, 2, l) + projected_power(S, 3, l))
        else:
            if l < 0:
                row = row - phi_row @ (projected_power(S, 1, l) + projected_power(S, 2, l))
            else:
                row = row + phi_row @ projected_power(S, 3, l)
    return row


def _u_weighted_variance(row: np.ndarray, S: SpectralData, model: BranchingModel) -> float:
    total = 0.0
    for j in range(model.J):
        total += float(S.u[j]) * float(np.real(row @ model.covs[j] @ row.conj()))
    return total


def _tail_ratios(S: SpectralData) -> tuple[float, float]:
    """Structural geometric ratios: (descending tail, ascending tail)."""
    supers = [abs(cl.eigenvalue) for cl in S.clusters if cl.label == "super"]
    s1 = min(supers) if supers else S.rho
    r_down = S.rho / (s1 * s1)  # < 1 whenever the supercritical gap is real
    r_up = (S.theta**2) / S.rho  # < 1 by the choice of theta
    return min(r_down, 1.0 - 1e-12), min(r_up, 1.0 - 1e-12)


def compute_sigma2(
    phi: Characteristic,
    S: SpectralData,
    model: BranchingModel,
    eps_tail: float = 1e-14,
    eps_report: float = 1e-10,
    window: tuple[int, int] | None = None,
    return_details: bool = False,
):
    """Case-i variance sigma^2 = sum_k rho^{-k} u-weighted Var[phi(k) + psi(k)],
    where psi(k) = B(k) . (own column - its mean) recenters the counted
    process.  Returns ``(value, error)`` with ``error`` a certified bound on
    the discarded two-sided tail (geometric on both sides).  A hard ``window``
    truncates without tail extension (partial sums are monotone in the
    window, every term being nonnegative)."""
    mt = phi.mean_table()
    noise_u: dict[int, float] = {}
    for (k, j), law in phi.noise.items():
        noise_u[k] = noise_u.get(k, 0.0) + float(S.u[j]) * law.variance()

    b_cache: dict[int, np.ndarray] = {}

    def b_row(k: int) -> np.ndarray:
        if k not in b_cache:
            b_cache[k] = compute_B(mt, S, k, eps_tail)
        return b_cache[k]

    def term(k: int) -> float:
        row = b_row(k)
        c = phi.coeff.get(k)
        if c is not None:
            row = row + c
        t = S.rho ** (-k) * _u_weighted_variance(row, S, model)
        return t + S.rho ** (-k) * noise_u.get(k, 0.0)

    keys = set(phi.value_keys)
    if mt:
        keys |= {min(mt), max(mt) + 1}
    if not keys:
        result = (0.0, 0.0)
        return (result[0], result[1], {}) if return_details else result

    if window is not None:
        k_lo, k_hi = window
        value = sum(term(k) for k in range(k_lo, k_hi + 1))
        if return_details:
            return value, float("inf"), {k: b_cache[k] for k in sorted(b_cache)}
        return value, float("inf")

    base_lo, base_hi = min(keys), max(keys)
    r_down, r_up = _tail_ratios(S)
    # Periodic mean matrices interleave exact zeros into the series, so a
    # single small term does not certify the tail: require a streak longer
    # than any possible period before stopping.
    streak_needed = 2 * S.J + 2
    value = 0.0
    k = base_lo
    streak = 0
    while k <= base_hi or streak < streak_needed:
        t = term(k)
        value += t
        streak = streak + 1 if t < eps_tail else 0
        k += 1
        if k - base_hi > _MAX_WINDOW:
            raise ArithmeticError("sigma2 upper tail failed to certify")
    k_hi = k - 1
    err_up = eps_tail * streak_needed * r_up / (1.0 - r_up)
    k = base_lo - 1
    streak = 0
    while streak < streak_needed:
        t = term(k)
        value += t
        streak = streak + 1 if t < eps_tail else 0
        k -= 1
        if base_lo - k > _MAX_WINDOW:
            raise ArithmeticError("sigma2 lower tail failed to certify")
    k_lo = k + 1
    err_down = eps_tail * streak_needed * r_down / (1.0 - r_down)
    error = err_up + err_down
    if return_details:
        table = {kk: b_cache[kk] for kk in sorted(b_cache) if k_lo <= kk <= k_hi}
        return value, error, table
    return value, error


def compute_sigma_star2(
    a: np.ndarray,
    S: SpectralData,
    model: BranchingModel,
    eps_tail: float = 1e-14,
    eps_report: float = 1e-10,
) -> tuple[float, float]:
    """Direct-route variance for an age-0 indicator row with a . u = 0:

        sigma*^2 = sum_{k>=1} rho^{-k} |a A^{k-1} pi3|_M^2
                 + sum_{k<=0} rho^{-k} |a A1^{k-1} pi1|_M^2,

    with M = sum_j u_j Cov L^(j) and |w|_M^2 = w M w^H.  Rejects rows whose
    Perron component does not vanish."""
    a = np.asarray(a, dtype=complex).reshape(-1)
    au = complex(a @ S.u.astype(complex))
    scale = max(1.0, float(np.linalg.norm(a)) * float(np.linalg.norm(S.u)))
    if abs(au) > 1e-10 * scale:
        raise ValueError(
            f"sigma_star2 requires a Perron-orthogonal row (|a.u| = {abs(au):.3e})"
        )
    M = np.zeros((S.J, S.J), dtype=float)
    for j in range(model.J):
        M = M + float(S.u[j]) * model.covs[j]
    r_down, r_up = _tail_ratios(S)

    def m_norm(w: np.ndarray) -> float:
        return float(np.real(w @ M @ w.conj()))

    # see compute_sigma2: a streak longer than any period is required before
    # a tail may be declared negligible
    streak_needed = 2 * S.J + 2
    value = 0.0
    # ascending series: rows a pi3 (pi3 A pi3)^{k-1}, k >= 1
    row = a @ S.pi3
    err_up = 0.0
    if np.linalg.norm(row) > 0:
        step = S.step(3, +1)
        k = 1
        streak = 0
        while streak < streak_needed:
            t = S.rho ** (-k) * m_norm(row)
            value += t
            streak = streak + 1 if t < eps_tail else 0
            row = row @ step
            k += 1
            if k > _MAX_WINDOW:
                raise ArithmeticError("sigma_star2 ascending tail failed to certify")
        err_up = eps_tail * streak_needed * r_up / (1.0 - r_up)
    # descending series: rows a pi1 A1^{k-1}, k <= 0
    row = a @ projected_power(S, 1, -1)
    err_down = 0.0
    if np.linalg.norm(row) > 0:
        step = S.step(1, -1)
        k = 0
        streak = 0
        while streak < streak_needed:
            t = S.rho ** (-k) * m_norm(row)
            value += t
            streak = streak + 1 if t < eps_tail else 0
            row = row @ step
            k -= 1
            if -k > _MAX_WINDOW:
                raise ArithmeticError("sigma_star2 descending tail failed to certify")
        err_down = eps_tail * streak_needed * r_down / (1.0 - r_down)
    return value, err_up + err_down


def compute_constants(
    source,
    S: SpectralData,
    model: BranchingModel,
    eps_tail: float = 1e-14,
    eps_report: float = 1e-10,
) -> TheoreticalConstants:
    """Assemble every limit constant for a characteristic (or an age-0
    indicator row, which also unlocks the independent sigma*^2 route)."""
    a_row = None
    if isinstance(source, Characteristic):
        phi = source
        if not phi.coeff and not phi.noise and set(phi.base) == {0}:
            a_row = phi.base[0]  # a pure age-0 indicator unlocks the direct route
    else:
        a_row = np.asarray(source, dtype=complex).reshape(-1)
        phi = make_indicator_characteristic(a_row)

    x1, x2 = compute_x1_x2(phi, S)
    sigma_l = compute_sigma_l_table(x2, S, model)
    l_star = find_l_star(sigma_l)
    sigma2, sigma2_err, b_table = compute_sigma2(
        phi, S, model, eps_tail=eps_tail, eps_report=eps_report, return_details=True
    )

    sigma_star2 = None
    sigma_star2_err = None
    notes: dict = {"assumption_sums": assumption_sums(phi, S, model)}
    if a_row is not None:
        try:
            sigma_star2, sigma_star2_err = compute_sigma_star2(
                a_row, S, model, eps_tail=eps_tail, eps_report=eps_report
            )
        except ValueError as exc:
            notes["sigma_star2_skipped"] = str(exc)

    if l_star is not None:
        case = "ii"
        sigma_case2 = sigma_l[l_star]
    elif sigma2 > eps_report:
        case = "i"
        sigma_case2 = sigma2
    else:
        case = "degenerate"
        sigma_case2 = 0.0
    if sigma2_err > eps_report:
        notes["sigma2_error_above_report"] = sigma2_err

    ks = sorted(b_table) or [0]
    return TheoreticalConstants(
        x1=x1,
        x2=x2,
        sigma_l=sigma_l,
        l_star=l_star,
        sigma2=float(sigma2),
        sigma2_error=float(sigma2_err),
        sigma_star2=sigma_star2,
        sigma_star2_error=sigma_star2_err,
        B_table=b_table,
        B_window=(ks[0], ks[-1]),
        case=case,
        sigma_case2=float(sigma_case2),
        notes=notes,
    )
