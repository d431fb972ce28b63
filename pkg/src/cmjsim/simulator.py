"""Generation-level exact simulation of the counted branching process.

The population is never materialized individual by individual.  Per
generation and per parent type, one multinomial draw over the finite
offspring law yields the outcome counts; those counts drive both the next
generation vector and the characteristic contributions, so the aggregated
process has exactly the law of the per-individual construction:

* the value's linear term needs only the sum of centered offspring columns
  over the type class, which is a linear image of the same multinomial draw;
* additive noise is i.i.d. across (individual, age) cells, so the noise sum
  over a class of c individuals is a multinomial functional with c trials,
  drawn once per requested observation time.

Counts are int64 throughout with an overflow guard that aborts a replicate
before any intermediate product can wrap.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .characteristics import Characteristic
from .constants import TheoreticalConstants
from .model import BranchingModel
from .spectral import SpectralData, projected_power

__all__ = [
    "GenerationState",
    "ReplicateResult",
    "BatchResult",
    "step_generation",
    "run_replicate",
    "run_batch",
    "normalization",
    "OVERFLOW_CAP",
]

OVERFLOW_CAP = 2**62
CSV_COLUMNS = ("index", "survived", "W_hat", "zphi_re", "zphi_im", "T_re", "T_im")


@dataclass(frozen=True)
class GenerationState:
    """Type counts of one generation."""

    generation: int
    counts: np.ndarray  # (J,) int64

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ReplicateResult:
    """One replicate: per-(characteristic, time) totals plus limit estimates."""

    index: int
    survived: bool
    aborted: bool
    z_final: np.ndarray | None
    w_hat: float | None
    w1_hat: np.ndarray | None
    zphi: dict  # (phi_index, t) -> complex
    T: dict  # (phi_index, t) -> complex
    cells: dict | None = None


def normalization(t: int, case: str, l_star: int | None, rho: float) -> float:
    """The dichotomy scaling r_t: rho^{t/2}, with the extra t^{l*+1/2} in case ii."""
    r = rho ** (t / 2.0)
    if case == "ii":
        if l_star is None:
            raise ValueError("case ii normalization requested but no polynomial index is present")
        r *= float(t) ** (l_star + 0.5)
    return r


def _max_offspring_total(model: BranchingModel) -> int:
    worst = 1
    for law in model.laws:
        worst = max(worst, int(law.outcome_matrix().sum(axis=1).max(initial=0)))
    return worst


def step_generation(
    model: BranchingModel, state: GenerationState, rng: np.random.Generator
) -> tuple[GenerationState, dict]:
    """Advance one generation; returns the new state and, per parent type,
    the multinomial outcome counts that produced it (the coupling handle)."""
    next_counts = np.zeros(model.J, dtype=np.int64)
    draws: dict[int, np.ndarray] = {}
    for j in range(model.J):
        c = int(state.counts[j])
        if c == 0:
            continue
        law = model.laws[j]
        nj = rng.multinomial(c, law.probs)
        draws[j] = nj
        next_counts += nj @ law.outcome_matrix()
    return GenerationState(state.generation + 1, next_counts), draws


def _validate_windows(phis: Sequence[Characteristic], ns: Sequence[int], N: int) -> None:
    for p, phi in enumerate(phis):
        name = phi.label or f"characteristic {p}"
        for t in ns:
            if phi.coeff:
                k_min = min(phi.coeff)
                if k_min < t - N + 1:
                    raise ValueError(
                        f"{name}: linear table reaches age {k_min} at time {t}, which "
                        f"needs offspring of generation {t - k_min} > {N - 1}; "
                        f"increase the horizon to at least {t - k_min + 1}"
                    )
            static = set(phi.base) | {k for (k, _) in phi.noise}
            if static:
                k_min = min(static)
                if k_min < t - N:
                    raise ValueError(
                        f"{name}: table reaches age {k_min} at time {t}, which needs "
                        f"generation {t - k_min} > {N}; increase the horizon"
                    )


def run_replicate(
    model: BranchingModel,
    phis: Characteristic | Sequence[Characteristic],
    n: int,
    N: int,
    seed,
    *,
    S: SpectralData | None = None,
    constants: TheoreticalConstants | None = None,
    ns: Sequence[int] | None = None,
    index: int = 0,
    record_cells: bool = False,
    overflow_cap: int = OVERFLOW_CAP,
) -> ReplicateResult:
    """Simulate one replicate to generation N and evaluate every requested
    characteristic at every requested time (default: just ``n``).

    ``seed`` may be an int, a SeedSequence or a Generator.  When spectral
    data is supplied the replicate also carries the martingale estimates
    ``W_hat = <v, Z_N> rho^{-N}`` and ``W1_hat = A1^{-N} pi1 Z_N``; with
    constants as well, the recentered normalized statistic T at each time.
    """
    if isinstance(phis, Characteristic):
        phis = [phis]
    phis = list(phis)
    ns = sorted({int(t) for t in (ns if ns is not None else [n])})
    if not ns or ns[-1] > N or ns[0] < 0:
        raise ValueError(f"requested times {ns} must be nonempty and lie within 0..{N}")
    _validate_windows(phis, ns, N)

    if isinstance(seed, np.random.Generator):
        rng = seed
    else:
        rng = np.random.Generator(np.random.PCG64(seed))

    J = model.J
    worst_litter = _max_offspring_total(model)
    states = np.zeros((N + 1, J), dtype=np.int64)
    states[0] = model.z0()
    draws_by_g: list[dict] = []
    state = GenerationState(0, states[0])
    for g in range(N):
        if state.total * worst_litter > overflow_cap:
            return ReplicateResult(
                index=index, survived=True, aborted=True, z_final=None,
                w_hat=None, w1_hat=None, zphi={}, T={}, cells=None,
            )
        state, draws = step_generation(model, state, rng)
        states[g + 1] = state.counts
        draws_by_g.append(draws)

    # Per-(generation, type) sums of centered offspring columns: the exact
    # aggregate of (l_u - A e_j) over the class, from the same draws that
    # produced the next generation.
    any_coeff = any(phi.coeff for phi in phis)
    dev_sums = np.zeros((N, J, J), dtype=float)
    if any_coeff:
        for g, draws in enumerate(draws_by_g):
            for j, nj in draws.items():
                law = model.laws[j]
                dev_sums[g, j] = nj @ law.outcome_matrix() - states[g, j] * model.A[:, j]

    cells = None
    if record_cells:
        cells = {"offspring": {}, "noise": {}}
        for g, draws in enumerate(draws_by_g):
            for j, nj in draws.items():
                cells["offspring"][(g, j)] = nj.copy()

    zphi: dict[tuple[int, int], complex] = {}
    for p, phi in enumerate(phis):
        for t in ns:
            total = 0.0 + 0.0j
            for k, row in phi.base.items():
                g = t - k
                if 0 <= g <= N:
                    total += complex(row @ states[g].astype(float))
            for k, c_row in phi.coeff.items():
                g = t - k
                if 0 <= g <= N - 1:
                    total += complex(c_row @ dev_sums[g].sum(axis=0))
            zphi[(p, t)] = total

    # Noise: one multinomial per (characteristic, time, age, type) cell, in
    # canonical order so the stream is reproducible.
    for p, phi in enumerate(phis):
        if not phi.noise:
            continue
        for t in ns:
            for (k, j), law in sorted(phi.noise.items()):
                g = t - k
                if not (0 <= g <= N):
                    continue
                c = int(states[g, j])
                if c == 0:
                    continue
                counts = rng.multinomial(c, law.probs)
                contrib = complex(sum(int(m) * v for m, v in zip(counts, law.values)))
                zphi[(p, t)] += contrib
                if record_cells:
                    cells["noise"][(p, t, k, j)] = counts

    z_final = states[N].copy()
    survived = bool(z_final.sum() > 0)
    w_hat = None
    w1_hat = None
    T: dict[tuple[int, int], complex] = {}
    if S is not None:
        zf = z_final.astype(float)
        w_hat = float(np.real(S.v @ zf)) * S.rho ** (-N)
        w1_hat = projected_power(S, 1, -N) @ zf.astype(complex)
        if constants is not None:
            z0 = states[0].astype(complex)
            for p in range(len(phis)):
                for t in ns:
                    martingale_part = complex(
                        constants.x1 @ (projected_power(S, 1, t - N) @ zf.astype(complex))
                    )
                    critical_part = complex(constants.x2 @ (projected_power(S, 2, t) @ z0))
                    r_t = normalization(t, constants.case, constants.l_star, S.rho)
                    T[(p, t)] = (zphi[(p, t)] - martingale_part - critical_part) / r_t

    return ReplicateResult(
        index=index,
        survived=survived,
        aborted=False,
        z_final=z_final,
        w_hat=w_hat,
        w1_hat=w1_hat,
        zphi=zphi,
        T=T,
        cells=cells,
    )


@dataclass(frozen=True)
class BatchResult:
    """An index-ordered collection of replicates with shared run metadata."""

    replicates: tuple[ReplicateResult, ...]
    n: int
    N: int
    ns: tuple[int, ...]
    master_seed: int
    n_phis: int

    @property
    def R(self) -> int:
        return len(self.replicates)

    @property
    def abort_rate(self) -> float:
        if not self.replicates:
            return 0.0
        return sum(1 for r in self.replicates if r.aborted) / len(self.replicates)

    def survivors(self, w_min: float = 0.0) -> list[ReplicateResult]:
        out = []
        for r in self.replicates:
            if r.aborted or not r.survived:
                continue
            if w_min > 0.0 and (r.w_hat is None or r.w_hat <= w_min):
                continue
            out.append(r)
        return out

    def summary(self) -> dict:
        aborted = sum(1 for r in self.replicates if r.aborted)
        survived = sum(1 for r in self.replicates if (not r.aborted) and r.survived)
        out = {
            "replicates": self.R,
            "aborted": aborted,
            "abort_rate": self.abort_rate,
            "survived": survived,
            "n": self.n,
            "N": self.N,
            "times": list(self.ns),
            "master_seed": self.master_seed,
        }
        ws = [r.w_hat for r in self.replicates if r.w_hat is not None and not r.aborted]
        if ws:
            out["w_hat_mean"] = float(np.mean(ws))
        return out

    def to_csv(self, path, phi_index: int = 0, t: int | None = None) -> None:
        """One row per replicate for one (characteristic, time) pair."""
        t = self.n if t is None else t
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in self.replicates:
                z = r.zphi.get((phi_index, t))
                tv = r.T.get((phi_index, t))
                writer.writerow(
                    [
                        r.index,
                        int(r.survived),
                        _fmt(r.w_hat),
                        _fmt(None if z is None else z.real),
                        _fmt(None if z is None else z.imag),
                        _fmt(None if tv is None else tv.real),
                        _fmt(None if tv is None else tv.imag),
                    ]
                )


def _fmt(x) -> str:
    return "nan" if x is None else format(float(x), ".17g")


def _replicate_seed(master_seed: int, idx: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(idx,))


def _run_chunk(args) -> list[ReplicateResult]:
    (lo, hi, model, phis, n, N, master_seed, S, constants, ns, record_cells, cap) = args
    out = []
    for idx in range(lo, hi):
        rng = np.random.Generator(np.random.PCG64(_replicate_seed(master_seed, idx)))
        out.append(
            run_replicate(
                model, phis, n, N, rng,
                S=S, constants=constants, ns=ns, index=idx,
                record_cells=record_cells, overflow_cap=cap,
            )
        )
    return out


def run_batch(
    model: BranchingModel,
    phis: Characteristic | Sequence[Characteristic],
    n: int,
    N: int,
    R: int,
    master_seed: int,
    *,
    S: SpectralData | None = None,
    constants: TheoreticalConstants | None = None,
    ns: Sequence[int] | None = None,
    workers: int = 1,
    record_cells: bool = False,
    overflow_cap: int = OVERFLOW_CAP,
) -> BatchResult:
    """R independent replicates with per-index seed streams.

    Replicate i always uses SeedSequence(master_seed, spawn_key=(i,)), so the
    result is byte-identical for any worker count; workers only split the
    index range.
    """
    if isinstance(phis, Characteristic):
        phis = [phis]
    phis = list(phis)
    ns_eff = tuple(sorted({int(t) for t in (ns if ns is not None else [n])}))
    workers = max(1, int(workers))
    if workers == 1 or R < 2 * workers:
        results = _run_chunk(
            (0, R, model, phis, n, N, master_seed, S, constants, ns_eff, record_cells, overflow_cap)
        )
    else:
        n_chunks = min(R, workers * 4)
        bounds = np.linspace(0, R, n_chunks + 1, dtype=int)
        tasks = [
            (int(lo), int(hi), model, phis, n, N, master_seed, S, constants, ns_eff,
             record_cells, overflow_cap)
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        results = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_run_chunk, tasks):
                results.extend(chunk)
    results.sort(key=lambda r: r.index)
    return BatchResult(
        replicates=tuple(results),
        n=n,
        N=N,
        ns=ns_eff,
        master_seed=master_seed,
        n_phis=len(phis),
    )
