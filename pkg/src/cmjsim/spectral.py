"""Spectral tri-partition of the mean matrix relative to sqrt(rho).

Eigenvalues of ``A`` are clustered into generalized eigenspaces and classified
against the critical circle of radius ``sqrt(rho)``:

* super-critical:  |lambda| >  sqrt(rho),
* critical:        |lambda| == sqrt(rho) (within ``tol``),
* sub-critical:    |lambda| <  sqrt(rho).

Per-cluster spectral (oblique) projections are computed from a complex Schur
form: the cluster is sorted to the leading block and the invariant-subspace
splitting ``T11 Y - Y T22 = T12`` is solved, giving

    pi = Q [[I, Y], [0, 0]] Q*.

This is better conditioned than powering ``(A - lambda I)`` and rank-probing
its kernel, and all stated invariants (partition of unity, idempotency,
commutation, mutual orthogonality) are verified on every decomposition;
residuals above ``100 * tol`` raise.

Numerical-stability rule used throughout the package: powers of ``A``
restricted to an invariant subspace are NEVER formed by powering a full
matrix and projecting afterwards.  Rounding noise leaks out of the subspace
and is then amplified by ``rho^k``, which destroys the (much smaller)
restricted component.  Instead every restricted power iterates with the
re-projected one-step matrix ``pi A pi`` (or ``pi A1^{-1} pi`` for negative
powers), which re-annihilates the leakage at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

__all__ = [
    "EigenCluster",
    "SpectralData",
    "spectral_decompose",
    "matrix_power_restricted",
    "projected_power",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-9

SUPER = "super"
CRITICAL = "critical"
SUB = "sub"

_DECAY_HORIZON = 40


@dataclass(frozen=True, eq=False)
class EigenCluster:
    """One eigenvalue cluster: representative value, multiplicity, projection."""

    eigenvalue: complex
    multiplicity: int
    projection: np.ndarray
    nilpotent_index: int
    label: str
    margin: float


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Everything the limit theory needs about the mean matrix.

    ``A1``/``A2`` act as ``A`` on the super/critical invariant subspace and as
    the identity on the complement; both are invertible.  ``D`` and ``N`` are
    the diagonalizable and nilpotent parts of ``pi2 A``.  ``theta`` is a decay
    bound with ``|pi3 A^n| <= C theta^n`` (C reported as ``decay_C``);
    ``delta`` quantifies the gap ``|A1^{-n}|^2 <= C rho^{-(1+delta) n}``.
    """

    A: np.ndarray
    tol: float
    rho: float
    sqrt_rho: float
    u: np.ndarray
    v: np.ndarray
    clusters: tuple[EigenCluster, ...]
    pi1: np.ndarray
    pi2: np.ndarray
    pi3: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    A1_inv: np.ndarray
    A2_inv: np.ndarray
    D: np.ndarray
    N: np.ndarray
    theta: float
    delta: float
    decay_C: float
    residuals: dict
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def J(self) -> int:
        return self.A.shape[0]

    def pi(self, i: int) -> np.ndarray:
        return (self.pi1, self.pi2, self.pi3)[i - 1]

    def step(self, i: int, sign: int = 1) -> np.ndarray:
        """Re-projected one-step matrix ``pi_i A pi_i`` (or its inverse step)."""
        key = ("step", i, sign)
        if key not in self._cache:
            p = self.pi(i)
            if sign >= 0:
                self._cache[key] = p @ self.A.astype(complex) @ p
            else:
                inv = self.A1_inv if i == 1 else self.A2_inv
                if i == 3:
                    raise ValueError("the sub-critical part of A need not be invertible")
                self._cache[key] = p @ inv @ p
        return self._cache[key]

    def classes(self) -> dict:
        out = {SUPER: [], CRITICAL: [], SUB: []}
        for c in self.clusters:
            out[c.label].append(c)
        return out


def _cluster_values(eigs: np.ndarray, radius: float) -> list[list[int]]:
    """Single-linkage clustering of eigenvalues at the given radius."""
    n = len(eigs)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(n):
        for b in range(a + 1, n):
            if abs(eigs[a] - eigs[b]) <= radius:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[rb] = ra
    groups: dict[int, list[int]] = {}
    for a in range(n):
        groups.setdefault(find(a), []).append(a)
    # canonical order: by (-|lambda|, -Re, Im) of the member mean
    def sort_key(idxs):
        z = np.mean(eigs[idxs])
        return (-abs(z), -z.real, z.imag)

    return sorted(groups.values(), key=sort_key)


def _cluster_projection(A: np.ndarray, members: np.ndarray, radius: float) -> np.ndarray:
    """Spectral projection onto the generalized eigenspace of one cluster."""
    n = A.shape[0]
    if len(members) == n:
        return np.eye(n, dtype=complex)

    # Any two eigenvalues in different single-linkage clusters are more than
    # `radius` apart, while re-computed Schur diagonal values sit within
    # rounding error of the originals, so half the radius separates cleanly.
    def inside(x):
        return bool(np.min(np.abs(x - members)) <= 0.5 * radius)

    T, Q, sdim = sla.schur(A.astype(complex), output="complex", sort=inside)
    if sdim != len(members):
        raise ArithmeticError(
            f"eigenvalue clustering is inconsistent: sorted {sdim} values into a "
            f"cluster of size {len(members)}; the Jordan structure is too "
            f"ill-conditioned for the requested tolerance"
        )
    s = sdim
    T11, T12, T22 = T[:s, :s], T[:s, s:], T[s:, s:]
    Y = sla.solve_sylvester(T11, -T22, T12)
    P = np.zeros((n, n), dtype=complex)
    P[:s, :s] = np.eye(s)
    P[:s, s:] = Y
    return Q @ P @ Q.conj().T


def _nilpotent_index(A: np.ndarray, lam: complex, proj: np.ndarray, tol: float) -> int:
    """Smallest m with (A - lambda I)^m pi = 0 (the largest Jordan block size)."""
    n = A.shape[0]
    shifted = A.astype(complex) - lam * np.eye(n)
    scale = max(1.0, float(np.linalg.norm(A, 2)))
    B = proj
    for m in range(1, n + 1):
        B = shifted @ B
        if np.linalg.norm(B, 2) <= max(100.0 * tol, 1e-6) * scale**m:
            return m
    return n


def _perron_vectors(pi_perron: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Right/left Perron vectors from the Perron projection.

    Normalization: sum(v) = 1 and <u, v> = 1, so that E[W | Z_0 = e_i] = v_i
    and Z_n / rho^n -> W u.
    """
    ones = np.ones(pi_perron.shape[0])
    w = pi_perron @ ones
    y = pi_perron.conj().T @ ones
    if np.max(np.abs(w.imag)) > 1e-8 or np.max(np.abs(y.imag)) > 1e-8:
        raise ArithmeticError("Perron projection produced non-real eigenvectors")
    w = w.real
    y = y.real
    if abs(y.sum()) <= tol or abs(w @ (y / y.sum())) <= tol:
        raise ArithmeticError("degenerate Perron projection; cannot normalize u, v")
    v = y / y.sum()
    u = w / (w @ v)
    return u, v


def spectral_decompose(A: np.ndarray, tol: float = DEFAULT_TOL) -> SpectralData:
    """Full spectral data for a non-negative square matrix.

    Eigenvalues whose mutual distance is below the clustering radius are
    merged into one generalized eigenspace.  The radius is the larger of
    ``tol`` and ``64 sqrt(eps) |A|``: a defective pair is split by LAPACK at
    the sqrt(eps) scale, so a literal ``tol``-radius would shatter genuine
    Jordan blocks.  Classification margins against sqrt(rho) still use
    ``tol`` itself.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if np.any(A < 0):
        raise ValueError("A must be entrywise non-negative")
    n = A.shape[0]
    norm_A = float(np.linalg.norm(A, 2))
    if norm_A == 0.0:
        raise ValueError("A is the zero matrix")

    eigs = np.sort_complex(np.linalg.eigvals(A))
    radius = max(tol, 64.0 * np.sqrt(np.finfo(float).eps) * norm_A)
    groups = _cluster_values(eigs, radius)

    rho = float(np.max(np.abs(eigs)))
    sqrt_rho = float(np.sqrt(rho))

    clusters = []
    eye = np.eye(n, dtype=complex)
    Ac = A.astype(complex)
    for idxs in groups:
        members = eigs[idxs]
        lam = complex(np.mean(members))
        if abs(lam.imag) <= radius:
            lam = complex(lam.real, 0.0)
        proj = _cluster_projection(A, members, radius)
        nil = _nilpotent_index(A, lam, proj, tol)
        dist = abs(abs(lam) - sqrt_rho)
        if abs(lam) > sqrt_rho + tol:
            label = SUPER
        elif dist <= tol:
            label = CRITICAL
        else:
            label = SUB
        clusters.append(
            EigenCluster(
                eigenvalue=lam,
                multiplicity=len(members),
                projection=proj,
                nilpotent_index=nil,
                label=label,
                margin=dist,
            )
        )

    pi1 = np.zeros((n, n), dtype=complex)
    pi2 = np.zeros((n, n), dtype=complex)
    pi3 = np.zeros((n, n), dtype=complex)
    for c in clusters:
        if c.label == SUPER:
            pi1 = pi1 + c.projection
        elif c.label == CRITICAL:
            pi2 = pi2 + c.projection
        else:
            pi3 = pi3 + c.projection

    A1 = Ac @ pi1 + (eye - pi1)
    A2 = Ac @ pi2 + (eye - pi2)
    A1_inv = np.linalg.inv(A1)
    A2_inv = np.linalg.inv(A2)

    D = np.zeros((n, n), dtype=complex)
    for c in clusters:
        if c.label == CRITICAL:
            D = D + c.eigenvalue * c.projection
    N = pi2 @ Ac - D

    # Perron cluster: largest real eigenvalue on the spectral-radius circle.
    perron = None
    for c in clusters:
        if abs(abs(c.eigenvalue) - rho) <= radius and abs(c.eigenvalue.imag) <= radius:
            if perron is None or c.eigenvalue.real > perron.eigenvalue.real:
                perron = c
    if perron is None:
        raise ArithmeticError("no real eigenvalue found on the spectral-radius circle")
    u, v = _perron_vectors(perron.projection, tol)

    sub_moduli = [abs(c.eigenvalue) for c in clusters if c.label == SUB]
    if sub_moduli and max(sub_moduli) > 0:
        s_max = max(sub_moduli)
        theta = min(1.01 * s_max, 0.5 * (s_max + sqrt_rho))
    else:
        theta = 0.5 * sqrt_rho if sqrt_rho > 0 else 0.5
    super_moduli = [abs(c.eigenvalue) for c in clusters if c.label == SUPER]
    if super_moduli and rho > 1.0:
        s1 = min(super_moduli)
        delta = max(1e-9, 0.99 * (2.0 * np.log(s1) / np.log(rho) - 1.0))
    else:
        delta = 0.0

    # measured decay constant sup_n |pi3 A^n| / theta^n over the check horizon
    decay_C = 0.0
    if np.linalg.norm(pi3) > tol:
        step3 = pi3 @ Ac @ pi3
        M = pi3
        decay_C = float(np.linalg.norm(M, 2))
        for k in range(1, _DECAY_HORIZON + 1):
            M = step3 @ M
            decay_C = max(decay_C, float(np.linalg.norm(M, 2)) / theta**k)

    residuals = _invariant_residuals(
        A, clusters, pi1, pi2, pi3, A1, A1_inv, D, N, u, v, rho
    )
    worst = max(residuals.values())
    if worst > 100.0 * tol:
        raise ArithmeticError(
            f"projection residual {worst:.3e} exceeds 100*tol = {100.0 * tol:.3e}; "
            f"the Jordan structure of A is too ill-conditioned"
        )

    return SpectralData(
        A=A,
        tol=tol,
        rho=rho,
        sqrt_rho=sqrt_rho,
        u=u,
        v=v,
        clusters=tuple(clusters),
        pi1=pi1,
        pi2=pi2,
        pi3=pi3,
        A1=A1,
        A2=A2,
        A1_inv=A1_inv,
        A2_inv=A2_inv,
        D=D,
        N=N,
        theta=theta,
        delta=delta,
        decay_C=decay_C,
        residuals=residuals,
    )


def _invariant_residuals(A, clusters, pi1, pi2, pi3, A1, A1_inv, D, N, u, v, rho) -> dict:
    n = A.shape[0]
    eye = np.eye(n)
    Ac = A.astype(complex)

    def nrm(M):
        return float(np.max(np.abs(M)))

    res = {
        "partition_of_unity": nrm(pi1 + pi2 + pi3 - eye),
        "A1_inverse": nrm(A1 @ A1_inv - eye),
        "eigen_right": nrm(A @ u - rho * u) / max(1.0, rho),
        "eigen_left": nrm(v @ A - rho * v) / max(1.0, rho),
        "uv_normalization": abs(float(u @ v) - 1.0),
        "D_plus_N": nrm(D + N - pi2 @ Ac),
        "DN_commute": nrm(D @ N - N @ D),
        "N_nilpotent": nrm(np.linalg.matrix_power(N, n)),
    }
    idm = 0.0
    com = 0.0
    orth = 0.0
    for a, ca in enumerate(clusters):
        p = ca.projection
        idm = max(idm, nrm(p @ p - p))
        com = max(com, nrm(p @ Ac - Ac @ p))
        for b, cb in enumerate(clusters):
            if a != b:
                orth = max(orth, nrm(p @ cb.projection))
    res["idempotency"] = idm
    res["commutation"] = com
    res["mutual_orthogonality"] = orth
    return res


def projected_power(S: SpectralData, i: int, k: int) -> np.ndarray:
    """The restricted power ``pi_i A^k pi_i`` for any integer k (i in {1, 2}).

    Negative powers use the invertibility of A on the super/critical
    subspaces.  For i = 3 only k >= 0 is defined.  Results are cached on the
    SpectralData instance.
    """
    key = ("pp", i, k)
    cache = S._cache
    if key in cache:
        return cache[key]
    if k == 0:
        out = S.pi(i)
    else:
        sign = 1 if k > 0 else -1
        prev = projected_power(S, i, k - sign)
        out = S.step(i, sign) @ prev
        if not np.all(np.isfinite(out)):
            raise OverflowError(f"restricted power overflowed at k={k}")
    cache[key] = out
    return out


def matrix_power_restricted(S: SpectralData, which, k: int) -> np.ndarray:
    """``A1^k`` or ``A2^k`` for any signed integer k.

    ``which`` is "A1"/"A2" (or 1/2).  Assembled as the projected power plus
    the identity on the complementary subspace, never by powering the full
    operator (see module docstring).
    """
    name = {"A1": 1, "A2": 2, 1: 1, 2: 2}.get(which)
    if name is None:
        raise ValueError(f"which must be 'A1' or 'A2', got {which!r}")
    eye = np.eye(S.J, dtype=complex)
    if k == 0:
        return eye
    return projected_power(S, name, k) + (eye - S.pi(name))
