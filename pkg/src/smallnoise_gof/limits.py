"""Limit laws of the two statistics: integrated squared Brownian bridge and
integrated squared Wiener process on [0, 1].

Two independent samplers are provided. ``sample_limit`` sums the
Karhunen-Loeve series with a mean correction for the dropped tail;
``path_sample_limit`` integrates simulated discrete paths. Upper quantiles
of the KL sample give the test thresholds.
"""
from __future__ import annotations

import csv
import enum
import functools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.special import polygamma
from scipy.stats import chi2, ks_2samp

__all__ = [
    "DEFAULT_ALPHAS",
    "Family",
    "QuantileTable",
    "build_quantile_table",
    "default_table",
    "ks_distance",
    "path_sample_limit",
    "quantile",
    "read_table_csv",
    "sample_limit",
    "write_table_csv",
]

DEFAULT_ALPHAS = (0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.15, 0.2, 0.25,
                  0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)
ROW_BLOCK = 10_000
COL_BLOCK = 500


class Family(str, enum.Enum):
    BRIDGE_SQ = "BRIDGE_SQ"
    WIENER_SQ = "WIENER_SQ"

    @classmethod
    def of(cls, value) -> "Family":
        if isinstance(value, cls):
            return value
        return cls(str(value).upper())

    def eigenvalues(self, K: int) -> np.ndarray:
        k = np.arange(1, K + 1, dtype=float)
        shift = 0.0 if self is Family.BRIDGE_SQ else 0.5
        return 1.0 / ((k - shift) ** 2 * np.pi ** 2)

    def tail_mean(self, K: int) -> float:
        """Sum of the eigenvalues beyond the first ``K``."""
        shift = 1.0 if self is Family.BRIDGE_SQ else 0.5
        return float(polygamma(1, K + shift)) / np.pi ** 2

    @property
    def mean(self) -> float:
        return 1.0 / 6.0 if self is Family.BRIDGE_SQ else 0.5

    @property
    def top_eigenvalue(self) -> float:
        return float(self.eigenvalues(1)[0])


def _block_rng(seed, *key) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _kl_block(family: Family, truncation: int, seed: int, row_block: int, rows: int) -> np.ndarray:
    lam = family.eigenvalues(truncation)
    out = np.zeros(rows)
    for cb in range(-(-truncation // COL_BLOCK)):
        lo = cb * COL_BLOCK
        hi = min(truncation, lo + COL_BLOCK)
        # a column block always draws COL_BLOCK columns so that smaller
        # truncations reuse the leading terms of larger ones
        z = _block_rng(seed, 0, row_block, cb).standard_normal((rows, COL_BLOCK))
        z = z[:, : hi - lo]
        out += (z * z) @ lam[lo:hi]
    return out + family.tail_mean(truncation)


def _path_block(family: Family, grid_n: int, seed: int, row_block: int, rows: int) -> np.ndarray:
    z = _block_rng(seed, 1, row_block).standard_normal((rows, grid_n))
    W = np.zeros((rows, grid_n + 1))
    np.cumsum(z, axis=1, out=W[:, 1:])
    W *= np.sqrt(1.0 / grid_n)
    if family is Family.BRIDGE_SQ:
        W -= np.linspace(0.0, 1.0, grid_n + 1)[None, :] * W[:, -1:]
        W[:, -1] = 0.0
    sq = W * W
    return (0.5 * (sq[:, 0] + sq[:, -1]) + sq[:, 1:-1].sum(axis=1)) / grid_n


def _blocks(n_draws):
    return [(b, min(ROW_BLOCK, n_draws - b * ROW_BLOCK)) for b in range(-(-n_draws // ROW_BLOCK))]


def _run(fn, n_draws, workers):
    blocks = _blocks(n_draws)
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(fn, *zip(*blocks)))
    else:
        parts = [fn(b, r) for b, r in blocks]
    return np.concatenate(parts) if parts else np.empty(0)


def sample_limit(family, n_draws: int, truncation: int, seed: int = 0, workers: int = 1) -> np.ndarray:
    """Karhunen-Loeve draws of the integrated squared bridge or Wiener process.

    ``sum_{k<=K} lambda_k Z_k^2`` plus the tail mean ``sum_{k>K} lambda_k``,
    with ``lambda_k = 1/(k pi)^2`` (bridge) or ``1/((k - 1/2) pi)^2``
    (Wiener). Draws are generated in blocks keyed by ``(seed, block)`` so the
    result does not depend on ``workers``.
    """
    family = Family.of(family)
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    fn = functools.partial(_kl_block, family, int(truncation), int(seed))
    return _run(fn, int(n_draws), workers)


def path_sample_limit(family, n_draws: int, grid_n: int, seed: int = 0, workers: int = 1) -> np.ndarray:
    """Trapezoid integral of squared discrete Wiener paths (or bridges
    ``W_t - t W_1``) on ``grid_n`` steps of [0, 1]."""
    family = Family.of(family)
    if grid_n < 100:
        raise ValueError("grid_n must be >= 100")
    fn = functools.partial(_path_block, family, int(grid_n), int(seed))
    return _run(fn, int(n_draws), workers)


@dataclass(frozen=True)
class QuantileTable:
    """Upper quantiles: ``P(family > quantiles[i]) = alphas[i]``."""

    family: Family
    alphas: np.ndarray
    quantiles: np.ndarray
    n_draws: int
    truncation: int

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float)
        q = np.asarray(self.quantiles, dtype=float)
        if a.shape != q.shape or a.ndim != 1 or a.size == 0:
            raise ValueError("alphas and quantiles must be matching 1-d arrays")
        if not (np.all(a > 0) and np.all(a < 1) and np.all(np.diff(a) > 0)):
            raise ValueError("alphas must be sorted and inside (0, 1)")
        if not (np.all(q > 0) and np.all(np.diff(q) < 0)):
            raise ValueError("quantiles must be positive and strictly decreasing in alpha")
        object.__setattr__(self, "family", Family.of(self.family))
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "quantiles", q)

    @functools.cached_property
    def _interp(self):
        x = np.log(np.append(self.alphas, 1.0))
        y = np.append(self.quantiles, 0.0)
        return PchipInterpolator(x, y, extrapolate=False)

    @functools.cached_property
    def _tail_shift(self):
        # far tail dominated by the first KL term: P(X > q) ~ A P(chi2_1 > (q - s) / lambda_1);
        # the shift s is fitted so that the two smallest tabulated levels are reproduced
        lam = self.family.top_eigenvalue
        (q0, q1), (a0, a1) = self.quantiles[:2], self.alphas[:2]

        def gap(s):
            return (chi2.logsf((q1 - s) / lam, 1) - chi2.logsf((q0 - s) / lam, 1)) - np.log(a1 / a0)

        lo = q1 - 1e-9 * max(1.0, q1)
        return brentq(gap, -100.0 * (q0 + lam), lo) if gap(-100.0 * (q0 + lam)) < 0 < gap(lo) else None

    def tail_quantile(self, alpha: float) -> float:
        """Quantile below the smallest tabulated level."""
        lam = self.family.top_eigenvalue
        q0, a0 = self.quantiles[0], self.alphas[0]
        s = self._tail_shift if self.alphas.size > 1 else None
        if s is None:
            # plain exponential tail with the rate of the first KL term
            return float(q0 + 2.0 * lam * np.log(a0 / alpha))
        target = chi2.logsf((q0 - s) / lam, 1) + np.log(alpha / a0)
        return float(s + lam * chi2.isf(np.exp(target), 1))

    def rows(self):
        for a, q in zip(self.alphas, self.quantiles):
            yield self.family.value, float(a), float(q), self.n_draws, self.truncation


def build_quantile_table(family, alphas: Sequence[float] = DEFAULT_ALPHAS, n_draws: int = 10 ** 6,
                         truncation: int = 10 ** 4, seed: int = 0, workers: int = 1) -> QuantileTable:
    """Empirical upper quantiles of a KL sample."""
    family = Family.of(family)
    alphas = np.sort(np.asarray(alphas, dtype=float))
    draws = sample_limit(family, n_draws, truncation, seed, workers)
    q = np.quantile(draws, 1.0 - alphas)
    return QuantileTable(family, alphas, q, int(n_draws), int(truncation))


def quantile(family, alpha: float, table: QuantileTable = None) -> float:
    """Threshold ``q`` with ``P(family > q) = alpha``.

    Exact at table nodes, monotone (PCHIP in ``log alpha``) between them and
    towards ``q = 0`` at ``alpha = 1``. Below the smallest tabulated alpha a
    shifted chi-square(1) tail, the shape of the leading KL term, is used.
    """
    family = Family.of(family)
    if table is None:
        table = default_table(family)
    if table.family is not family:
        raise ValueError(f"table is for {table.family.value}, not {family.value}")
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    hit = np.flatnonzero(table.alphas == alpha)
    if hit.size:
        return float(table.quantiles[hit[0]])
    if alpha < table.alphas[0]:
        return table.tail_quantile(alpha)
    return float(table._interp(np.log(alpha)))


def write_table_csv(tables, path) -> None:
    """CSV with columns ``family,alpha,quantile,n_draws,truncation``."""
    with open(path, "w", newline="") as fh:
        _write_rows(tables, fh)


def _write_rows(tables, fh):
    w = csv.writer(fh)
    w.writerow(["family", "alpha", "quantile", "n_draws", "truncation"])
    for tab in tables:
        for fam, a, q, n, k in tab.rows():
            w.writerow([fam, repr(a), repr(q), n, k])


def read_table_csv(path) -> dict:
    """Tables keyed by family from a CSV written by ``write_table_csv``."""
    rows: dict = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(Family.of(r["family"]), []).append(r)
    out = {}
    for fam, rs in rows.items():
        rs.sort(key=lambda r: float(r["alpha"]))
        out[fam] = QuantileTable(fam, [float(r["alpha"]) for r in rs],
                                 [float(r["quantile"]) for r in rs],
                                 int(rs[0]["n_draws"]), int(rs[0]["truncation"]))
    return out


DATA_FILE = "quantiles.csv"


@functools.lru_cache(maxsize=None)
def _default_tables():
    ref = resources.files("smallnoise_gof").joinpath("data", DATA_FILE)
    with resources.as_file(ref) as p:
        return read_table_csv(Path(p))


def default_table(family) -> QuantileTable:
    """The shipped table (10^6 KL draws at K = 10^4, seed 0)."""
    return _default_tables()[Family.of(family)]


def ks_distance(sample, oracle_sample) -> float:
    """Kolmogorov-Smirnov distance between the empirical law of ``sample``
    and that of an oracle sample."""
    sample = np.asarray(sample, dtype=float)
    sample = sample[np.isfinite(sample)]
    if sample.size == 0:
        raise ValueError("empty sample")
    return float(ks_2samp(sample, np.asarray(oracle_sample, dtype=float), method="asymp").statistic)
