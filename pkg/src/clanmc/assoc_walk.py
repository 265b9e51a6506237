"""The associated random walk and its log-domain prefix functionals.

The walk S has increments X (log mean offspring), S_0 = 0.  Everything the
closed-form survival machinery needs is a prefix functional of S: the
log-domain prefix sums b_k = sum_{r<k} e^{-S_r}, running extrema, and the
first-minimum time.  The module also estimates the two renewal-type
harmonic functions of the walk (series over staying-negative and
staying-nonnegative events) by truncated Monte Carlo, and checks their
harmonicity under one step of the walk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .env_model import EnvironmentSpec, EnvironmentPath, draw_increments
from .errors import DomainError
from .logdomain import LogValue
from .mcstats import MCEstimate
from .parallel import block_sizes, map_blocks
from .streams import RngStream

# Prefix-difference cancellation guard for log_b_range.  When the window
# contributes less than this fraction (in log units) of the prefix, the
# subtraction of accumulated prefixes has too few significant digits left,
# so the window is re-summed directly.  The direct sum is exact and O(n-i);
# the threshold is deliberately generous because accumulated prefix error
# grows with n while the 1e-10 closed-form tolerances do not.
_PREFIX_DIFF_GUARD = 1e-3

_WALK_BLOCK = 4096
_WALK_CHUNK = 128


@dataclass(frozen=True)
class WalkFunctionals:
    """One walk with every prefix functional populated.

    s[k] is S_k for k = 0..n.  log_b[k] = log b_k with b_k = sum_{r<k}
    e^{-S_r}; b_0 = 0 is stored as -inf (the log-domain exact zero).
    l_min[k] = min(S_0..S_k).  m_max[k] = max(S_1..S_k), with m_max[0] =
    -inf (empty maximum).  tau is the smallest index attaining min(S_0..S_n).
    """

    s: np.ndarray = field(repr=False)
    log_b: np.ndarray = field(repr=False)
    l_min: np.ndarray = field(repr=False)
    m_max: np.ndarray = field(repr=False)
    tau: int

    @property
    def n(self) -> int:
        return self.s.size - 1


def _from_s(s: np.ndarray) -> WalkFunctionals:
    neg = -s
    log_b = np.empty(s.size + 1)
    log_b[0] = -np.inf
    np.logaddexp.accumulate(neg, out=log_b[1:])
    l_min = np.minimum.accumulate(s)
    m_max = np.empty_like(s)
    m_max[0] = -np.inf
    if s.size > 1:
        np.maximum.accumulate(s[1:], out=m_max[1:])
    tau = int(np.argmin(s))
    return WalkFunctionals(s=s, log_b=log_b, l_min=l_min, m_max=m_max, tau=tau)


def build_walk(path: EnvironmentPath) -> WalkFunctionals:
    """Populate every functional in one pass over the path."""
    s = np.empty(path.n + 1)
    s[0] = 0.0
    np.cumsum(path.x, out=s[1:])
    return _from_s(s)


def reflect(w: WalkFunctionals) -> WalkFunctionals:
    """The sign-flipped walk with all functionals rebuilt.  An involution."""
    return _from_s(-w.s)


def log_window_sum(w: WalkFunctionals, lo: int, hi: int) -> float:
    """log sum_{k=lo}^{hi-1} e^{-S_k}, summed directly (exact, O(hi-lo))."""
    return float(logsumexp(-w.s[lo:hi]))


def log_b_range(w: WalkFunctionals, i: int, n: int) -> LogValue:
    """The window functional sum_{k=i}^{n-1} e^{S_i - S_k}.

    Evaluated as e^{S_i} (b_n - b_i) from the stored prefixes; when the
    prefixes nearly cancel the window is re-summed directly.
    """
    if not 0 <= i < n <= w.n:
        raise DomainError(f"need 0 <= i < n <= walk length, got i={i}, n={n}")
    s_i = float(w.s[i])
    if i == 0:
        return LogValue.from_log(s_i + float(w.log_b[n]))
    d = float(w.log_b[n] - w.log_b[i])
    if d < _PREFIX_DIFF_GUARD:
        return LogValue.from_log(s_i + log_window_sum(w, i, n))
    return LogValue.from_log(s_i + float(w.log_b[n]) + math.log(-math.expm1(-d)))


def truncated_functionals(w: WalkFunctionals, t: int, j: int, n: int) -> tuple[LogValue, LogValue, LogValue]:
    """Head, middle and tail exponential sums around a split point j.

    G = sum_{r=0}^{t} e^{-S_r};  H = sum_{r=t+1}^{j-1} e^{S_j - S_r};
    T = sum_{r=j}^{n} e^{S_j - S_r}.  Typically evaluated on the reflected
    walk when decomposing the dual clan functional by first-minimum time.
    """
    if not 0 <= t < j <= n <= w.n:
        raise DomainError(f"need 0 <= t < j <= n <= walk length, got t={t}, j={j}, n={n}")
    g = LogValue.from_log(float(logsumexp(-w.s[0:t + 1])))
    s_j = float(w.s[j])
    if j == t + 1:
        h = LogValue.zero()
    else:
        h = LogValue.from_log(s_j + float(logsumexp(-w.s[t + 1:j])))
    t_val = LogValue.from_log(s_j + float(logsumexp(-w.s[j:n + 1])))
    return g, h, t_val


# ---------------------------------------------------------------------------
# Renewal-type harmonic functions of the walk, by truncated Monte Carlo.
#
# u(x) = 1{x>=0} + sum_{n>=1} P(S_n >= -x, max(S_1..S_n) <  0)
# v(x) = 1{x<0}  + sum_{n>=1} P(S_n <  -x, min(S_0..S_n) >= 0)
#
# Each path contributes events only while it persists on one side of 0, so
# simulation stops at the first sign violation (or at the horizon).  The
# summand decays faster than the persistence probability ~ n^{-1/2}, so the
# truncated tail is small; stability under horizon doubling is the
# practical bias check.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UVTable:
    """A harmonic-function estimate on a grid, with per-block sums for resampling."""

    side: str  # "u" or "v"
    xs: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    horizon: int
    samples: int
    block_sums: np.ndarray = field(repr=False)   # (n_blocks, G) int64 count sums
    block_paths: np.ndarray = field(repr=False)  # (n_blocks,) paths per block

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,estimate,stderr,horizon,samples\n")
            for x, m, se in zip(self.xs, self.means, self.stderrs):
                fh.write(f"{float(x)!r},{float(m)!r},{float(se)!r},{self.horizon},{self.samples}\n")


def _indicator(side: str, x: float) -> int:
    return int(x >= 0) if side == "u" else int(x < 0)


def _persistence_scan(spec: EnvironmentSpec, side: str, grid: np.ndarray, horizon: int,
                      m_samples: int, stream: RngStream, purpose: str, shards: int = 1):
    """Count per-path side-persistence events against a threshold grid.

    Returns (block_paths, block_sums, total_sumsq) where block_sums[b, g]
    is the summed per-path event count of block b at grid point g.
    """
    grid = np.asarray(grid, dtype=float)
    ngrid = grid.size
    sizes = block_sizes(m_samples, _WALK_BLOCK)

    def run_block(b: int):
        gen = stream.substream(purpose, b)
        rows = sizes[b]
        counts = np.zeros((rows, ngrid + 1), dtype=np.int32)
        s_cur = np.zeros(rows)
        alive = np.arange(rows)
        done = 0
        while alive.size and done < horizon:
            k = min(_WALK_CHUNK, horizon - done)
            seg = np.cumsum(draw_increments(spec, gen, (alive.size, k)), axis=1)
            seg += s_cur[alive, None]
            bad = seg >= 0.0 if side == "u" else seg < 0.0
            has_bad = bad.any(axis=1)
            first = np.where(has_bad, bad.argmax(axis=1), k)
            valid = np.arange(k)[None, :] < first[:, None]
            vals = -seg[valid]  # row-major: row r contributes first[r] leading entries
            if vals.size:
                row_rep = np.repeat(alive, first)
                bins = np.searchsorted(grid, vals, side="left")
                np.add.at(counts, (row_rep, bins), 1)
            keep = ~has_bad
            if keep.any():
                s_cur[alive[keep]] = seg[keep, k - 1]
            alive = alive[keep]
            done += k
        if side == "u":
            per_path = np.cumsum(counts[:, :ngrid], axis=1, dtype=np.int64)
        else:
            totals = counts.sum(axis=1, dtype=np.int64)[:, None]
            per_path = totals - np.cumsum(counts[:, :ngrid], axis=1, dtype=np.int64)
        return rows, per_path.sum(axis=0), (per_path.astype(np.int64) ** 2).sum(axis=0)

    results = map_blocks(run_block, len(sizes), shards)
    block_paths = np.array([r[0] for r in results], dtype=np.int64)
    block_sums = np.stack([r[1] for r in results])
    total_sumsq = np.sum([r[2] for r in results], axis=0)
    return block_paths, block_sums, total_sumsq


def _table_from_scan(side, grid, horizon, m_samples, block_paths, block_sums, total_sumsq) -> UVTable:
    total = block_sums.sum(axis=0)
    means = np.array([_indicator(side, x) for x in grid], dtype=float) + total / m_samples
    # the indicator shifts every path's value equally, so the spread is the counts'
    var = (total_sumsq / m_samples - (total / m_samples) ** 2) / max(m_samples - 1, 1)
    stderrs = np.sqrt(np.maximum(var, 0.0))
    return UVTable(side, grid, means, stderrs, horizon, m_samples, block_sums, block_paths)


def estimate_u_table(spec: EnvironmentSpec, x_grid, horizon: int, m_samples: int,
                     stream: RngStream, shards: int = 1, purpose: str = "assoc_walk.u") -> UVTable:
    """Estimate the staying-negative harmonic function on a grid of x >= 0."""
    grid = np.asarray(x_grid, dtype=float)
    if np.any(grid < 0):
        raise DomainError("u-table grid must be nonnegative")
    if not np.all(np.diff(grid) > 0) and grid.size > 1:
        raise DomainError("grid must be strictly increasing")
    scan = _persistence_scan(spec, "u", grid, horizon, m_samples, stream, purpose, shards)
    return _table_from_scan("u", grid, horizon, m_samples, *scan)


def estimate_v_table(spec: EnvironmentSpec, x_grid, horizon: int, m_samples: int,
                     stream: RngStream, shards: int = 1, purpose: str = "assoc_walk.v") -> UVTable:
    """Estimate the staying-nonnegative harmonic function on a grid of x < 0."""
    grid = np.asarray(x_grid, dtype=float)
    if np.any(grid >= 0):
        raise DomainError("v-table grid must be strictly negative")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise DomainError("grid must be strictly increasing")
    scan = _persistence_scan(spec, "v", grid, horizon, m_samples, stream, purpose, shards)
    return _table_from_scan("v", grid, horizon, m_samples, *scan)


def estimate_u(spec: EnvironmentSpec, x: float, horizon: int = 10_000, m_samples: int = 100_000,
               stream: RngStream | None = None, shards: int = 1) -> MCEstimate:
    """Truncated-series estimate of the staying-negative harmonic function at one point.

    By convention x < 0 returns the exact zero estimate: the indicator
    vanishes and S_n >= -x > 0 contradicts a negative running maximum.
    """
    if stream is None:
        raise DomainError("an RngStream is required")
    if horizon < 1:
        raise DomainError("horizon must be >= 1")
    if x < 0:
        return MCEstimate.from_int_stats(0, 0, m_samples)
    _, block_sums, sumsq = _persistence_scan(
        spec, "u", np.array([float(x)]), horizon, m_samples, stream, "assoc_walk.u", shards)
    raw = MCEstimate.from_int_stats(int(block_sums.sum()), int(sumsq[0]), m_samples)
    return raw.shifted(1)


def estimate_v(spec: EnvironmentSpec, x: float, horizon: int = 10_000, m_samples: int = 100_000,
               stream: RngStream | None = None, shards: int = 1) -> MCEstimate:
    """Truncated-series estimate of the staying-nonnegative harmonic function at x <= 0."""
    if stream is None:
        raise DomainError("an RngStream is required")
    if x > 0:
        raise DomainError(f"defined for x <= 0, got {x}")
    if x == 0:
        # indicator 0; S_n < 0 contradicts the walk staying nonnegative
        return MCEstimate.from_int_stats(0, 0, m_samples)
    _, block_sums, sumsq = _persistence_scan(
        spec, "v", np.array([float(x)]), horizon, m_samples, stream, "assoc_walk.v", shards)
    raw = MCEstimate.from_int_stats(int(block_sums.sum()), int(sumsq[0]), m_samples)
    return raw.shifted(1)


@dataclass(frozen=True)
class HarmonicityPoint:
    """One grid point of the harmonicity check E[f(x + X); side] = f(x)."""

    x: float
    table_value: float
    table_stderr: float
    expectation_value: float
    residual: float
    stderr: float          # delete-one-group jackknife over paired blocks
    allowance: float       # piecewise-linear interpolation allowance
    bound: float           # 3 * stderr + allowance

    @property
    def passed(self) -> bool:
        return self.residual <= self.bound

    def as_dict(self) -> dict:
        return {
            "x": self.x,
            "table_value": self.table_value,
            "expectation_value": self.expectation_value,
            "residual": self.residual,
            "stderr": self.stderr,
            "allowance": self.allowance,
            "bound": self.bound,
            "passed": self.passed,
        }


def _interp_extrap(xs: np.ndarray, ys: np.ndarray, q: np.ndarray) -> np.ndarray:
    out = np.interp(q, xs, ys)
    if xs.size >= 2:
        hi = q > xs[-1]
        if hi.any():
            slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
            out[hi] = ys[-1] + slope * (q[hi] - xs[-1])
        lo = q < xs[0]
        if lo.any():
            slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
            out[lo] = ys[0] + slope * (q[lo] - xs[0])
    return out


def _x_padding(spec: EnvironmentSpec) -> float:
    # generous upper quantile of one increment
    if spec.family == "gaussian":
        return 6.0 * spec.param
    return spec.param


def harmonicity_residual(spec: EnvironmentSpec, x_grid, horizon: int = 10_000,
                         m_samples: int = 100_000, stream: RngStream | None = None,
                         side: str = "u", grid_step: float = 0.05, shards: int = 1,
                         n_jackknife: int = 20) -> list[HarmonicityPoint]:
    """Residuals of the one-step harmonicity identity on a grid.

    side "u": checks E[u(x + X); x + X >= 0] = u(x) on x >= 0.
    side "v": checks E[v(x + X); x + X <  0] = v(x) on x < 0 only; the
      identity does not extend to x = 0 under this series convention
      (v(0) = 0 while the one-step expectation is positive), so x = 0 is
      rejected rather than checked.

    A single table on a uniform grid of the given step serves every x
    (piecewise-linear interpolation, linear extrapolation at the ends).
    The combined uncertainty of table noise, draw noise and their
    correlation is estimated by a delete-one-group jackknife over paired
    (path-block, draw-block) groups.
    """
    if stream is None:
        raise DomainError("an RngStream is required")
    if side not in ("u", "v"):
        raise DomainError(f"side must be 'u' or 'v', got {side}")
    x_grid = np.asarray(x_grid, dtype=float)
    if side == "u" and np.any(x_grid < 0):
        raise DomainError("u-harmonicity grid must be nonnegative")
    if side == "v" and np.any(x_grid > -1e-12):
        raise DomainError("v-harmonicity grid must be strictly negative")

    pad = _x_padding(spec)
    if side == "u":
        k_max = int(math.ceil((float(x_grid.max()) + pad) / grid_step))
        nodes = np.arange(0, k_max + 1, dtype=float) * grid_step
        table = estimate_u_table(spec, nodes, horizon, m_samples, stream, shards,
                                 purpose="assoc_walk.harmonicity.u")
    else:
        k_max = int(math.ceil((-float(x_grid.min()) + pad) / grid_step))
        nodes = -np.arange(k_max, 0, -1, dtype=float) * grid_step  # excludes 0: f jumps there
        table = estimate_v_table(spec, nodes, horizon, m_samples, stream, shards,
                                 purpose="assoc_walk.harmonicity.v")

    ind = np.array([_indicator(side, x) for x in nodes], dtype=float)
    gen = stream.substream(f"assoc_walk.harmonicity.{side}.draws", 0)
    draws = draw_increments(spec, gen, m_samples)

    n_blocks = table.block_paths.size
    groups = min(n_jackknife, n_blocks)
    block_group = np.arange(n_blocks) % groups
    draw_group = (np.arange(m_samples) * groups) // m_samples  # contiguous groups

    def table_means(excluded: int | None) -> np.ndarray:
        if excluded is None:
            sums = table.block_sums.sum(axis=0)
            paths = int(table.block_paths.sum())
        else:
            keep = block_group != excluded
            sums = table.block_sums[keep].sum(axis=0)
            paths = int(table.block_paths[keep].sum())
        return ind + sums / paths

    def residual_for(x: float, means: np.ndarray, dmask: np.ndarray) -> tuple[float, float]:
        y = x + draws[dmask]
        keep = y >= 0.0 if side == "u" else y < 0.0
        vals = _interp_extrap(nodes, means, y[keep])
        expect = float(vals.sum()) / y.size
        at_x = float(_interp_extrap(nodes, means, np.array([x]))[0])
        return expect, expect - at_x

    full_means = table_means(None)
    allowance = 0.5 * float(np.max(np.abs(np.diff(full_means)))) if nodes.size >= 2 else 0.0

    out = []
    all_draws = np.ones(m_samples, dtype=bool)
    for x in x_grid:
        expect, res = residual_for(float(x), full_means, all_draws)
        jk = np.empty(groups)
        for g in range(groups):
            _, jk[g] = residual_for(float(x), table_means(g), draw_group != g)
        se = math.sqrt((groups - 1) / groups * float(np.sum((jk - jk.mean()) ** 2)))
        at_x = float(_interp_extrap(nodes, full_means, np.array([float(x)]))[0])
        se_x = float(_interp_extrap(nodes, table.stderrs, np.array([float(x)]))[0])
        out.append(HarmonicityPoint(
            x=float(x), table_value=at_x, table_stderr=se_x,
            expectation_value=expect, residual=abs(res), stderr=se,
            allowance=allowance, bound=3.0 * se + allowance,
        ))
    return out


def survival_scaling_scan(spec: EnvironmentSpec, n_values, m_samples: int,
                          stream: RngStream, shards: int = 1):
    """Persistence probabilities and end-weighted persistence moments per n.

    For each requested n, estimates P(min(S_0..S_n) >= 0), P(max(S_1..S_n) < 0)
    and E[e^{-S_n}; min >= 0] by early-terminated simulation (a path leaves
    the scan at its first sign violation).  Used by the square-root and
    three-halves scaling diagnostics.
    """
    n_values = sorted(int(n) for n in n_values)
    sizes = block_sizes(m_samples, _WALK_BLOCK)

    def run_block(b: int):
        out = {}
        for side, tag in (("v", "stay_nonneg"), ("u", "stay_neg")):
            gen = stream.substream(f"assoc_walk.scaling.{tag}", b)
            rows = sizes[b]
            s_cur = np.zeros(rows)
            alive = np.arange(rows)
            done = 0
            counts = {}
            endsum = {}
            for n_stop in n_values:
                while alive.size and done < n_stop:
                    k = min(_WALK_CHUNK, n_stop - done)
                    seg = np.cumsum(draw_increments(spec, gen, (alive.size, k)), axis=1)
                    seg += s_cur[alive, None]
                    bad = seg >= 0.0 if side == "u" else seg < 0.0
                    has_bad = bad.any(axis=1)
                    keep = ~has_bad
                    if keep.any():
                        s_cur[alive[keep]] = seg[keep, k - 1]
                    alive = alive[keep]
                    done += k
                counts[n_stop] = alive.size
                if side == "v":
                    endsum[n_stop] = float(np.exp(-s_cur[alive]).sum()) if alive.size else 0.0
            out[side] = (counts, endsum)
        return out

    results = map_blocks(run_block, len(sizes), shards)
    scan = {}
    for n_stop in n_values:
        stay_nonneg = sum(r["v"][0][n_stop] for r in results)
        stay_neg = sum(r["u"][0][n_stop] for r in results)
        endsum = math.fsum(r["v"][1][n_stop] for r in results)
        scan[n_stop] = {
            "p_stay_nonneg": stay_nonneg / m_samples,
            "p_stay_neg": stay_neg / m_samples,
            "end_weight_stay_nonneg": endsum / m_samples,
        }
    return scan
