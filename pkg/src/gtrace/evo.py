"""Offline agent optimization and prototype extraction.

CMA-ES searches the planner weight box through a scaled-sigmoid
reparameterization.  Every evaluated agent lands in a Pareto archive over
``(agg, res)``; the near-optimal set and two disjoint k-DPP draws from it
become the prototype agents used by self-play and racing.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .objectives import ObjectivePoint, evaluate_batch
from .planner import WEIGHT_NAMES, AgentParams

log = logging.getLogger(__name__)

D_NEAR = 0.3
N_DPP = 20
DPP_BANDWIDTH = 0.5
EIG_FLOOR = 1e-12


# ---------------------------------------------------------------- genome


def decode(values) -> AgentParams:
    """Map an unconstrained 8-vector into the weight box."""
    lo, hi = AgentParams.bounds()
    x = np.asarray(values, dtype=np.float64)
    return AgentParams.from_array(lo + (hi - lo) / (1.0 + np.exp(-x)))


def encode(params: AgentParams) -> np.ndarray:
    """Inverse of :func:`decode` on the open box."""
    lo, hi = AgentParams.bounds()
    u = (params.as_array() - lo) / (hi - lo)
    if np.any(u <= 0) or np.any(u >= 1):
        raise ValueError("encode needs a point strictly inside the box")
    return np.log(u) - np.log1p(-u)


# ---------------------------------------------------------------- CMA-ES


@dataclass(frozen=True)
class CmaState:
    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    path_sigma: np.ndarray
    path_c: np.ndarray
    generation: int
    lam: int

    @classmethod
    def initial(cls, mean, sigma, lam=None) -> "CmaState":
        mean = np.array(mean, dtype=np.float64)
        n = mean.size
        lam = lam or 4 + int(3 * math.log(n))
        if lam < 2:
            raise ValueError("population size must be at least 2")
        return cls(mean, float(sigma), np.eye(n), np.zeros(n), np.zeros(n), 0, int(lam))

    @property
    def dim(self) -> int:
        return self.mean.size

    # strategy constants, tutorial defaults
    @property
    def mu(self) -> int:
        return self.lam // 2

    @property
    def weights(self) -> np.ndarray:
        w = math.log((self.lam + 1) / 2) - np.log(np.arange(1, self.mu + 1))
        return w / w.sum()

    @property
    def mueff(self) -> float:
        w = self.weights
        return 1.0 / float(w @ w)

    def rates(self):
        """``(cc, cs, c1, cmu, damps, chi_n)``."""
        n, me = self.dim, self.mueff
        cc = (4 + me / n) / (n + 4 + 2 * me / n)
        cs = (me + 2) / (n + me + 5)
        c1 = 2 / ((n + 1.3) ** 2 + me)
        cmu = min(1 - c1, 2 * (me - 2 + 1 / me) / ((n + 2) ** 2 + me))
        damps = 1 + 2 * max(0.0, math.sqrt((me - 1) / (n + 1)) - 1) + cs
        chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
        return cc, cs, c1, cmu, damps, chi_n


def _eig(cov):
    cov = (cov + cov.T) / 2
    d, b = np.linalg.eigh(cov)
    if d.min() < EIG_FLOOR:
        log.warning("covariance not positive definite (min eigenvalue %.3g); flooring", d.min())
        d = np.maximum(d, EIG_FLOOR)
    return d, b


def cma_ask(state: CmaState, seed) -> np.ndarray:
    """``lam x n`` samples from ``N(mean, sigma^2 C)``."""
    rng = np.random.default_rng(seed)
    d, b = _eig(state.cov)
    z = rng.standard_normal((state.lam, state.dim))
    return state.mean + state.sigma * (z * np.sqrt(d)) @ b.T


def _order(genomes, fitnesses, tiebreak):
    # lexsort sorts by the last key first; genome columns make ties permutation-proof
    keys = [genomes[:, j] for j in range(genomes.shape[1] - 1, -1, -1)]
    if tiebreak is not None:
        keys.append(np.asarray(tiebreak, dtype=np.float64))
    keys.append(fitnesses)
    return np.lexsort(keys)


def cma_tell(state: CmaState, genomes, fitnesses, tiebreak=None) -> CmaState:
    """One generation of rank-based mean, path, covariance and step-size updates.

    Lower fitness is better.  Ties are broken by ``tiebreak`` and then by the
    genome coordinates, so the update only depends on the set of pairs.
    """
    genomes = np.asarray(genomes, dtype=np.float64)
    fitnesses = np.asarray(fitnesses, dtype=np.float64)
    if genomes.shape != (state.lam, state.dim) or fitnesses.shape != (state.lam,):
        raise ValueError("need exactly lam genomes and fitnesses")
    if not np.all(np.isfinite(fitnesses)):
        raise ValueError("fitnesses must be finite")
    n = state.dim
    cc, cs, c1, cmu, damps, chi_n = state.rates()
    w, mueff = state.weights, state.mueff
    d, b = _eig(state.cov)
    inv_sqrt = (b / np.sqrt(d)) @ b.T
    gen = state.generation + 1
    flat = bool(np.all(fitnesses == fitnesses[0]))

    if flat:
        # no ranking information: hold the mean, let the paths decay
        mean = state.mean.copy()
        y = np.zeros(n)
    else:
        best = genomes[_order(genomes, fitnesses, tiebreak)[: state.mu]]
        mean = w @ best
        y = (mean - state.mean) / state.sigma

    ps = (1 - cs) * state.path_sigma + math.sqrt(cs * (2 - cs) * mueff) * inv_sqrt @ y
    ps_norm = float(np.linalg.norm(ps))
    hsig = ps_norm / math.sqrt(1 - (1 - cs) ** (2 * gen)) / chi_n < 1.4 + 2 / (n + 1)
    pc = (1 - cc) * state.path_c + hsig * math.sqrt(cc * (2 - cc) * mueff) * y

    if flat:
        cov = state.cov
    else:
        ys = (best - state.mean) / state.sigma
        rank_mu = (ys.T * w) @ ys
        cov = ((1 - c1 - cmu) * state.cov
               + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * state.cov)
               + cmu * rank_mu)
        cov = (cov + cov.T) / 2
    sigma = state.sigma * math.exp((cs / damps) * (ps_norm / chi_n - 1))
    return replace(state, mean=mean, sigma=sigma, cov=cov, path_sigma=ps, path_c=pc, generation=gen)


# ---------------------------------------------------------------- archive


def scalarize(obj: ObjectivePoint) -> float:
    """Equal-weight sum used as the CMA-ES fitness."""
    return float(obj.agg + obj.res)


def dominates(a, b) -> bool:
    """Minimization dominance on objective pairs."""
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


@dataclass(frozen=True)
class Explored:
    params: AgentParams
    point: ObjectivePoint
    generation: int = -1
    genome_id: int = -1


@dataclass
class ParetoArchive:
    entries: list = field(default_factory=list)
    all_explored: list = field(default_factory=list)

    def front_points(self) -> np.ndarray:
        return np.array([[e.point.agg, e.point.res] for e in self.entries]).reshape(-1, 2)

    def explored_points(self) -> np.ndarray:
        return np.array([[e.point.agg, e.point.res] for e in self.all_explored]).reshape(-1, 2)


def pareto_update(archive: ParetoArchive, candidate) -> ParetoArchive:
    """Log ``candidate`` and insert it into the front unless it is dominated."""
    if not isinstance(candidate, Explored):
        candidate = Explored(*candidate)
    p = (candidate.point.agg, candidate.point.res)
    if not all(math.isfinite(v) for v in p):
        raise ValueError("objectives must be finite")
    archive.all_explored.append(candidate)
    if any(dominates((e.point.agg, e.point.res), p) for e in archive.entries):
        return archive
    archive.entries = [e for e in archive.entries if not dominates(p, (e.point.agg, e.point.res))]
    archive.entries.append(candidate)
    return archive


def near_optimal_set(archive: ParetoArchive, d_near=D_NEAR) -> list[int]:
    """Indices into ``all_explored`` within ``d_near`` of some front entry."""
    if not archive.entries:
        raise ValueError("empty Pareto front")
    pts = archive.explored_points()
    front = archive.front_points()
    dist = np.sqrt(((pts[:, None, :] - front[None, :, :]) ** 2).sum(-1)).min(axis=1)
    return [int(i) for i in np.flatnonzero(dist <= d_near)]


# ---------------------------------------------------------------- k-DPP


def rbf_kernel(points, bandwidth) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    sq = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    return np.exp(-sq / (2 * bandwidth ** 2))


def elementary_symmetric(lam, k) -> np.ndarray:
    """Table ``E[l, n]`` = e_l of the first ``n`` eigenvalues."""
    n = len(lam)
    e = np.zeros((k + 1, n + 1))
    e[0, :] = 1.0
    for l in range(1, k + 1):
        for m in range(1, n + 1):
            e[l, m] = e[l, m - 1] + lam[m - 1] * e[l - 1, m - 1]
    return e


def dpp_sample(points, k, bandwidth=DPP_BANDWIDTH, seed=0) -> list[int]:
    """Draw a size-``k`` subset from the k-DPP with an RBF kernel over ``points``.

    Eigenvectors are picked by elementary-symmetric-polynomial conditioning on
    the subset size, then items are drawn one at a time from the projection
    DPP they span.
    """
    n = len(points)
    if k > n:
        raise ValueError(f"cannot draw {k} items from {n}")
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == n:
        return list(range(n))
    if k == 0:
        return []
    rng = np.random.default_rng(seed)
    lam, vecs = np.linalg.eigh(rbf_kernel(points, bandwidth))
    lam = np.maximum(lam, EIG_FLOOR)
    e = elementary_symmetric(lam, k)

    chosen = []
    l = k
    for m in range(n, 0, -1):
        if l == 0:
            break
        if l == m or rng.random() < lam[m - 1] * e[l - 1, m - 1] / e[l, m]:
            chosen.append(m - 1)
            l -= 1
    v = vecs[:, chosen]

    out = []
    while v.shape[1]:
        p = (v ** 2).sum(axis=1)
        p[out] = 0.0
        i = int(rng.choice(n, p=p / p.sum()))
        out.append(i)
        j = int(np.argmax(np.abs(v[i])))
        vj = v[:, j]
        v = np.delete(v - np.outer(vj, v[i] / vj[i]), j, axis=1)
        if v.shape[1]:
            v, _ = np.linalg.qr(v)
    return sorted(out)


@dataclass
class PrototypeSets:
    """Prototype agents, each set given as indices into ``explored``."""

    explored: list
    pf: list
    near_optimal: list
    dpp1: list
    dpp2: list

    def agents(self, which) -> list[Explored]:
        return [self.explored[i] for i in getattr(self, which)]


def extract_prototypes(archive: ParetoArchive, d_near=D_NEAR, n_dpp=N_DPP, bandwidth=DPP_BANDWIDTH,
                       seed=0) -> PrototypeSets:
    """Front, near-optimal set and two disjoint k-DPP draws from it."""
    front_ids = {id(e) for e in archive.entries}
    pf = [i for i, e in enumerate(archive.all_explored) if id(e) in front_ids]
    no = near_optimal_set(archive, d_near)
    if len(no) < 2 * n_dpp:
        raise ValueError(f"near-optimal set has {len(no)} agents, need {2 * n_dpp} for two disjoint draws")
    pts = archive.explored_points()
    first = dpp_sample(pts[no], n_dpp, bandwidth, seed)
    rest = [i for j, i in enumerate(no) if j not in set(first)]
    second = dpp_sample(pts[rest], n_dpp, bandwidth, seed + 1)
    return PrototypeSets(archive.all_explored, pf, no, [no[j] for j in first], [rest[j] for j in second])


# ---------------------------------------------------------------- driver


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    mean_agg: float
    mean_res: float
    best_fitness: float
    overtake_rate: float
    crash_rate: float
    sigma: float


def optimize(track, scenarios, opponents, generations, pop, seed, sigma0=1.0, progress=None,
             **rollout_kw):
    """Run CMA-ES over agent weights; returns ``(archive, state, stats)``."""
    state = CmaState.initial(np.zeros(len(WEIGHT_NAMES)), sigma0, pop)
    archive = ParetoArchive()
    stats = []
    for g in range(generations):
        genomes = cma_ask(state, [seed, g])
        points, results = [], []
        for gid, x in enumerate(genomes):
            params = decode(x)
            point, rs = evaluate_batch(params, scenarios, opponents, track, **rollout_kw)
            pareto_update(archive, Explored(params, point, g, gid))
            points.append(point)
            results.extend(rs)
        fit = np.array([scalarize(p) for p in points])
        agg = np.array([p.agg for p in points])
        res = np.array([p.res for p in points])
        stats.append(GenerationStats(
            g, float(agg.mean()), float(res.mean()), float(fit.min()),
            float(np.mean([r.overtake for r in results])),
            float(np.mean([r.ego_crashed_into_opp for r in results])), state.sigma))
        state = cma_tell(state, genomes, fit, tiebreak=agg)
        if progress:
            progress(stats[-1])
    return archive, state, stats


# ---------------------------------------------------------------- files

ARCHIVE_COLUMNS = list(WEIGHT_NAMES) + ["agg", "res", "generation", "genome_id"]
PROTOTYPE_COLUMNS = ["set", "id"] + list(WEIGHT_NAMES) + ["agg", "res"]


def _row(e: Explored):
    return [repr(float(v)) for v in e.params.as_array()] + [repr(float(e.point.agg)), repr(float(e.point.res))]


def save_archive(path, archive: ParetoArchive):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(ARCHIVE_COLUMNS)
        for e in archive.all_explored:
            w.writerow(_row(e) + [e.generation, e.genome_id])


def load_archive(path) -> ParetoArchive:
    """Rebuild an archive by replaying the explored log in file order."""
    archive = ParetoArchive()
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ARCHIVE_COLUMNS:
            raise ValueError(f"{path}: unexpected archive header")
        for row in reader:
            if row:
                v = [float(c) for c in row[:10]]
                pareto_update(archive, Explored(AgentParams.from_array(v[:8]), ObjectivePoint(v[8], v[9]),
                                                int(row[10]), int(row[11])))
    return archive


def save_prototypes(path, protos: PrototypeSets):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PROTOTYPE_COLUMNS)
        for label in ("pf", "near_optimal", "dpp1", "dpp2"):
            for i in getattr(protos, label):
                w.writerow([label, i] + _row(protos.explored[i]))


def load_prototypes(path) -> PrototypeSets:
    """Read prototype sets; ``explored`` is rebuilt from the listed agents only."""
    sets = {k: [] for k in ("pf", "near_optimal", "dpp1", "dpp2")}
    agents = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != PROTOTYPE_COLUMNS:
            raise ValueError(f"{path}: unexpected prototype header")
        for row in reader:
            if not row:
                continue
            i = int(row[1])
            v = [float(c) for c in row[2:]]
            agents[i] = Explored(AgentParams.from_array(v[:8]), ObjectivePoint(v[8], v[9]))
            sets[row[0]].append(i)
    explored = [agents.get(i) for i in range(max(agents) + 1)] if agents else []
    return PrototypeSets(explored, **sets)


def save_stats(path, stats):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "mean_agg", "mean_res", "best_fitness", "overtake_rate", "crash_rate", "sigma"])
        for s in stats:
            w.writerow([s.generation] + [repr(float(v)) for v in
                        (s.mean_agg, s.mean_res, s.best_fitness, s.overtake_rate, s.crash_rate, s.sigma)])
