"""Multitype branching model built from finite-support offspring laws.

A model has J types.  A parent of type j produces one offspring column
``L^(j)`` drawn from a finite list of (probability, count-vector) outcomes;
columns of distinct parents (and distinct types) are independent.  The mean
matrix ``A`` has column j equal to the mean of ``L^(j)``, so the type-count
process satisfies ``E[Z_{n+1} | Z_n] = A Z_n``.

All moments used downstream (means, per-column covariances, variances of
arbitrary linear functionals of a column) are computed by exact enumeration
of the outcome tables — never by sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "OffspringLaw",
    "BranchingModel",
    "AssumptionReport",
    "build_model",
    "validate_assumptions",
    "enumerate_column_outcomes",
    "perron_root",
    "is_primitive",
    "row_variance",
    "mixing_covariance",
]

PROB_TOL = 1e-12


def _parse_number(x, path: str):
    """Parse a probability entry: int, float, Fraction or a string like '3/8'."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise ValueError(f"{path}: expected a number, got a boolean")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return float(x)
    if isinstance(x, str):
        try:
            return Fraction(x)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"{path}: cannot parse number {x!r}") from exc
    raise ValueError(f"{path}: cannot parse number of type {type(x).__name__}")


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support law of one parent type's offspring column.

    ``probs_exact`` keeps the numbers exactly as given (Fraction when the
    input was exact) so that test oracles can re-derive every moment in
    rational arithmetic.
    """

    probs: tuple[float, ...]
    counts: tuple[tuple[int, ...], ...]
    probs_exact: tuple[object, ...]

    def __post_init__(self):
        if len(self.probs) != len(self.counts):
            raise ValueError("offspring law: probs and counts length mismatch")

    @property
    def n_outcomes(self) -> int:
        return len(self.probs)

    def outcome_matrix(self) -> np.ndarray:
        """All outcome columns stacked as an (n_outcomes, J) int64 array."""
        return np.asarray(self.counts, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class BranchingModel:
    """Immutable model data: laws plus exactly-enumerated moments.

    ``A[i, j]`` is the mean number of type-i children of a type-j parent,
    i.e. column j of ``A`` is the mean of ``L^(j)``.  ``covs[j]`` is the
    covariance matrix of ``L^(j)``; ``var_entries[i, j]`` its diagonal.
    Type indices are zero-based throughout the library (scenario files use
    one-based labels, converted at the loading boundary).
    """

    J: int
    laws: tuple[OffspringLaw, ...]
    initial_type: int
    A: np.ndarray
    covs: tuple[np.ndarray, ...]
    var_entries: np.ndarray

    def z0(self) -> np.ndarray:
        z = np.zeros(self.J, dtype=np.int64)
        z[self.initial_type] = 1
        return z


@dataclass(frozen=True)
class AssumptionReport:
    """Outcome of the standing-assumption checks; failures are reported, not thrown."""

    gw1_supercritical: bool
    gw2_positively_regular: bool
    gw3_nondegenerate: bool
    rho: float
    details: dict

    @property
    def all_ok(self) -> bool:
        return self.gw1_supercritical and self.gw2_positively_regular and self.gw3_nondegenerate


def _parse_law(entries, J: int, path: str) -> OffspringLaw:
    if not isinstance(entries, Sequence) or isinstance(entries, (str, bytes)):
        raise ValueError(f"{path}: expected a list of outcomes")
    if len(entries) == 0:
        raise ValueError(f"{path}: outcome list is empty")
    probs_exact = []
    counts = []
    for idx, item in enumerate(entries):
        ipath = f"{path}.{idx}"
        if not isinstance(item, Mapping):
            raise ValueError(f"{ipath}: expected a mapping with keys 'p' and 'counts'")
        if "p" not in item:
            raise ValueError(f"{ipath}.p: missing")
        if "counts" not in item:
            raise ValueError(f"{ipath}.counts: missing")
        p = _parse_number(item["p"], f"{ipath}.p")
        if not (0 <= float(p) <= 1):
            raise ValueError(f"{ipath}.p: probability {float(p)} outside [0, 1]")
        raw_counts = item["counts"]
        if isinstance(raw_counts, int) and J == 1:
            raw_counts = [raw_counts]
        if not isinstance(raw_counts, Sequence) or isinstance(raw_counts, (str, bytes)):
            raise ValueError(f"{ipath}.counts: expected a list of {J} integers")
        if len(raw_counts) != J:
            raise ValueError(f"{ipath}.counts: expected length {J}, got {len(raw_counts)}")
        vec = []
        for c in raw_counts:
            if isinstance(c, bool) or not isinstance(c, int):
                raise ValueError(f"{ipath}.counts: entries must be integers, got {c!r}")
            if c < 0:
                raise ValueError(f"{ipath}.counts: negative count {c}")
            vec.append(int(c))
        probs_exact.append(p)
        counts.append(tuple(vec))
    total = sum(Fraction(p) if isinstance(p, (Fraction, int)) else Fraction(repr(p)) for p in probs_exact)
    if abs(float(total) - 1.0) > PROB_TOL:
        raise ValueError(f"{path}: probabilities sum to {float(total)!r}, not 1")
    return OffspringLaw(
        probs=tuple(float(p) for p in probs_exact),
        counts=tuple(counts),
        probs_exact=tuple(probs_exact),
    )


def build_model(data: Mapping) -> BranchingModel:
    """Build a :class:`BranchingModel` from a declarative description.

    ``data`` uses the scenario-file model schema::

        {"types": J,
         "initial_type": 1,                       # one-based in input
         "offspring": {1: [{"p": "1/2", "counts": [2, 2]}, ...], ...}}

    Moments are computed by exact enumeration of the outcome tables.
    Raises ``ValueError`` naming the offending key path on malformed input.
    """
    if not isinstance(data, Mapping):
        raise ValueError("model: expected a mapping")
    if "types" not in data:
        raise ValueError("model.types: missing")
    J = data["types"]
    if isinstance(J, bool) or not isinstance(J, int) or J < 1:
        raise ValueError(f"model.types: expected a positive integer, got {J!r}")
    if "offspring" not in data:
        raise ValueError("model.offspring: missing")
    offspring = data["offspring"]
    if not isinstance(offspring, Mapping):
        raise ValueError("model.offspring: expected a mapping keyed by type")
    laws = []
    for j in range(1, J + 1):
        entry = offspring.get(j, offspring.get(str(j)))
        if entry is None:
            raise ValueError(f"model.offspring.{j}: missing")
        laws.append(_parse_law(entry, J, f"model.offspring.{j}"))
    extra = set(str(k) for k in offspring) - set(str(j) for j in range(1, J + 1))
    if extra:
        raise ValueError(f"model.offspring.{sorted(extra)[0]}: type label outside 1..{J}")

    init = data.get("initial_type", 1)
    if isinstance(init, bool) or not isinstance(init, int) or not (1 <= init <= J):
        raise ValueError(f"model.initial_type: expected an integer in 1..{J}, got {init!r}")

    A = np.zeros((J, J), dtype=float)
    covs = []
    var_entries = np.zeros((J, J), dtype=float)
    for j, law in enumerate(laws):
        outs = law.outcome_matrix().astype(float)
        p = np.asarray(law.probs)
        mean = p @ outs
        A[:, j] = mean
        dev = outs - mean
        cov = (dev * p[:, None]).T @ dev
        cov = 0.5 * (cov + cov.T)  # enforce exact symmetry
        covs.append(cov)
        var_entries[:, j] = np.diag(cov)
    return BranchingModel(
        J=J,
        laws=tuple(laws),
        initial_type=init - 1,
        A=A,
        covs=tuple(covs),
        var_entries=var_entries,
    )


def perron_root(A: np.ndarray) -> float:
    """Spectral radius of A (for non-negative A this is the Perron root)."""
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(A, dtype=float)))))


def is_primitive(A: np.ndarray, max_power: int | None = None) -> bool:
    """True when some power ``A^n`` (n <= J*J) is entrywise strictly positive."""
    A = np.asarray(A)
    J = A.shape[0]
    limit = max_power if max_power is not None else J * J
    P = (A > 0)
    step = P.copy()
    for _ in range(limit):
        if P.all():
            return True
        P = (P.astype(np.int64) @ step.astype(np.int64)) > 0
    return bool(P.all())


def validate_assumptions(model: BranchingModel) -> AssumptionReport:
    """Check the three standing assumptions; never raises.

    GW1: Perron root rho > 1 (supercritical).
    GW2: positive regularity (primitivity of A).
    GW3: offspring randomness present (sum of covariances non-zero) with all
    entry variances finite — finiteness is automatic for finite supports.
    """
    rho = perron_root(model.A)
    gw1 = bool(rho > 1.0)
    gw2 = is_primitive(model.A)
    cov_total = np.zeros((model.J, model.J))
    for c in model.covs:
        cov_total = cov_total + c
    cov_norm = float(np.linalg.norm(cov_total))
    finite = bool(np.all(np.isfinite(model.var_entries)))
    gw3 = bool(cov_norm > PROB_TOL and finite)
    return AssumptionReport(
        gw1_supercritical=gw1,
        gw2_positively_regular=gw2,
        gw3_nondegenerate=gw3,
        rho=rho,
        details={
            "rho_margin": rho - 1.0,
            "total_covariance_norm": cov_norm,
            "variances_finite": finite,
        },
    )


def enumerate_column_outcomes(model: BranchingModel, j: int) -> list[tuple[object, np.ndarray]]:
    """The exact finite support of ``L^(j)`` with probabilities.

    Probabilities are returned exactly as given (Fractions survive), making
    this the substrate for every exact moment computation downstream.
    ``j`` is a zero-based type index.
    """
    if not (0 <= j < model.J):
        raise IndexError(f"type index {j} out of range for J={model.J}")
    law = model.laws[j]
    return [
        (law.probs_exact[m], np.asarray(law.counts[m], dtype=np.int64))
        for m in range(law.n_outcomes)
    ]


def row_variance(model: BranchingModel, w: np.ndarray, j: int) -> float:
    """Var[w . L^(j)] for a complex row w, via the enumerated covariance."""
    w = np.asarray(w, dtype=complex)
    return float(np.real(w @ model.covs[j] @ w.conj()))


def mixing_covariance(model: BranchingModel, weights: np.ndarray) -> np.ndarray:
    """Weighted covariance sum ``M = sum_j weights[j] * Cov[L^(j)]``."""
    M = np.zeros((model.J, model.J))
    for j in range(model.J):
        M = M + float(np.real(weights[j])) * model.covs[j]
    return M
