"""Synthetic data for the two experiment families.

* Gaussian cases: clean data N(0, 1); case 1 anomalies shift the mean,
  case 2 anomalies shrink the spread.
* A linear (DC) power-grid surrogate z = Hx + e with an unobservable attack
  a = Hc, plus the classical residual chi-square (J) bad-data test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .io import ConfigError, parse_kv

# --- Gaussian cases ----------------------------------------------------------

CASE_RANGES = {1: ("mu", -1.0, 1.0), 2: ("sigma", 0.5, 0.8)}


@dataclass(frozen=True)
class GaussianScenario:
    case_id: int = 1
    mu: float = 0.0
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.case_id not in CASE_RANGES:
            raise ValueError(f"case_id must be 1 or 2, got {self.case_id}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


def gaussian_batch(scenario: GaussianScenario, N: int) -> np.ndarray:
    """``N`` seeded draws from N(mu, sigma^2), shape ``(N, 1)``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    eps = np.random.default_rng(scenario.seed).standard_normal(N)
    return (scenario.mu + scenario.sigma * eps)[:, None]


def gaussian_batches(case_id: int, n_batches: int, N: int, rng: np.random.Generator,
                     anomalous: bool, nuisance: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Batches ``(B, N, 1)`` for one class, and the per-batch mu or sigma used.

    For the anomalous class the nuisance parameter is drawn per batch,
    uniformly on the case's interval, unless ``nuisance`` pins it.  A pinned
    case-1 value is read as a magnitude: each batch gets mean ``+-nuisance``
    with a random sign.
    """
    _, lo, hi = CASE_RANGES[case_id]
    eps = rng.standard_normal((n_batches, N))
    if not anomalous:
        params = np.full(n_batches, 0.0 if case_id == 1 else 1.0)
    elif nuisance is None:
        params = rng.uniform(lo, hi, size=n_batches)
    elif case_id == 1:
        params = abs(nuisance) * rng.choice([-1.0, 1.0], size=n_batches)
    else:
        params = np.full(n_batches, float(nuisance))
    if case_id == 1:
        z = params[:, None] + eps
    else:
        z = params[:, None] * eps
    return z[..., None], params


# --- DC grid surrogate ---------------------------------------------------------

# Four non-reference bus angles; rows are line flows (theta_i - theta_j, with
# the reference bus at angle 0) plus one leaf injection.  Bus 4 is a leaf fed
# only by line 3-4, so shifting its angle touches exactly two meters.
DEFAULT_H = np.array([
    [-1, 0, 0, 0],   # flow 0-1
    [1, -1, 0, 0],   # flow 1-2
    [0, 1, -1, 0],   # flow 2-3
    [0, 0, 1, -1],   # flow 3-4
    [0, -1, 0, 0],   # flow 0-2
    [1, 0, -1, 0],   # flow 1-3
    [0, 0, -1, 1],   # injection at bus 4
    [0, 0, -1, 0],   # flow 0-3
], dtype=float)
DEFAULT_NOISE_SIGMA = 0.01
DEFAULT_STATE_MEAN = np.array([-0.05, -0.08, -0.10, -0.12])
DEFAULT_STATE_STD = np.array([0.02, 0.02, 0.02, 0.01])


def default_shift() -> np.ndarray:
    """Angle shift at the leaf bus sized so that ||H c|| = 3 * noise sigma."""
    return np.array([0.0, 0.0, 0.0, 3.0 * DEFAULT_NOISE_SIGMA / np.sqrt(2.0)])


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DcGridModel:
    H: np.ndarray = field(default_factory=lambda: DEFAULT_H.copy())
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    state_mean: np.ndarray = field(default_factory=lambda: DEFAULT_STATE_MEAN.copy())
    state_std: np.ndarray = field(default_factory=lambda: DEFAULT_STATE_STD.copy())

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        mean = np.asarray(self.state_mean, dtype=float).ravel()
        std = np.asarray(self.state_std, dtype=float).ravel()
        m, n = H.shape
        if np.linalg.matrix_rank(H) < n:
            raise RankDeficientError(f"H ({m}x{n}) does not have full column rank")
        if m <= n:
            raise ValueError(f"need more measurements than states, got {m} <= {n}")
        if mean.size != n or std.size != n:
            raise ValueError("state mean/std must have one entry per state")
        if not self.noise_sigma > 0 or np.any(std < 0):
            raise ValueError("noise_sigma must be positive and state_std nonnegative")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "state_mean", mean)
        object.__setattr__(self, "state_std", std)
        # least-squares estimator and residual projector, computed once
        pinv = np.linalg.pinv(H)
        object.__setattr__(self, "_pinv", pinv)
        object.__setattr__(self, "_resid", np.eye(m) - H @ pinv)

    @property
    def n_meas(self) -> int:
        return self.H.shape[0]

    @property
    def n_state(self) -> int:
        return self.H.shape[1]

    @property
    def dof(self) -> int:
        return self.n_meas - self.n_state

    def measurement_mean(self) -> np.ndarray:
        return self.H @ self.state_mean

    def measurement_cov(self) -> np.ndarray:
        return (self.H * self.state_std**2) @ self.H.T + self.noise_sigma**2 * np.eye(self.n_meas)

    def estimate(self, z) -> np.ndarray:
        """Least-squares state estimate (equal meter weights); works row-wise."""
        return np.asarray(z, dtype=float) @ self._pinv.T

    def residual(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) @ self._resid.T


@dataclass(frozen=True, eq=False)
class AttackSpec:
    shift_c: np.ndarray = field(default_factory=default_shift)
    target_meters: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "shift_c", np.asarray(self.shift_c, dtype=float).ravel())

    def vector(self, grid: DcGridModel) -> np.ndarray:
        if self.shift_c.size != grid.n_state:
            raise ValueError(f"shift_c has {self.shift_c.size} entries, grid has {grid.n_state} states")
        return grid.H @ self.shift_c


def sample_states(grid: DcGridModel, n: int, rng: np.random.Generator) -> np.ndarray:
    return grid.state_mean + grid.state_std * rng.standard_normal((n, grid.n_state))


def measure(grid: DcGridModel, x, seed=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """z = Hx + e for a single state ``(n,)`` or a stack of states ``(k, n)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != grid.n_state:
        raise ValueError(f"state has dim {x.shape[-1]}, grid expects {grid.n_state}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    hx = x @ grid.H.T
    return hx + grid.noise_sigma * rng.standard_normal(hx.shape)


def inject_attack(z, grid: DcGridModel, attack: AttackSpec) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != grid.n_meas:
        raise ValueError(f"measurement has dim {z.shape[-1]}, grid expects {grid.n_meas}")
    return z + attack.vector(grid)


def grid_batches(grid: DcGridModel, n_batches: int, N: int, rng: np.random.Generator,
                 attack: AttackSpec | None = None) -> np.ndarray:
    z = measure(grid, sample_states(grid, n_batches * N, rng), rng=rng)
    if attack is not None:
        z = inject_attack(z, grid, attack)
    return z.reshape(n_batches, N, grid.n_meas)


def chi2_quantile(dof: int, p: float) -> float:
    if dof < 1:
        raise ValueError("dof must be >= 1")
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    return float(special.chdtri(dof, 1.0 - p))


def j_statistic(z, grid: DcGridModel) -> np.ndarray | float:
    """Normalized squared residual norm; row-wise for stacked measurements."""
    r = grid.residual(z)
    j = (r * r).sum(axis=-1) / grid.noise_sigma**2
    return float(j) if np.ndim(j) == 0 else j


def jx_test(z, grid: DcGridModel, fp_level: float) -> tuple[float, bool]:
    """Return ``(J, reject)``; reject when J exceeds the chi-square quantile."""
    z = np.asarray(z, dtype=float)
    if z.shape != (grid.n_meas,):
        raise ValueError(f"expected a measurement vector of length {grid.n_meas}")
    j = j_statistic(z, grid)
    return j, j > chi2_quantile(grid.dof, 1.0 - fp_level)


# --- scenario config files ----------------------------------------------------

def _vector(s: str) -> np.ndarray:
    return np.array([float(t) for t in s.replace(",", " ").split()])


def load_grid_config(text: str, source: str = "<grid config>") -> tuple[DcGridModel, AttackSpec]:
    """Parse ``key = value`` scalars and an ``[H]`` block of CSV rows."""
    head, sep, block = text.partition("[H]")
    kv = parse_kv(head, source)
    H = DEFAULT_H
    if sep:
        rows = [ln.split("#", 1)[0].strip() for ln in block.splitlines()]
        rows = [r for r in rows if r]
        try:
            H = np.array([[float(t) for t in r.split(",")] for r in rows])
        except ValueError as e:
            raise ConfigError(f"{source}: [H] block is not numeric CSV") from e
        if H.ndim != 2 or H.size == 0:
            raise ConfigError(f"{source}: [H] rows have unequal lengths or are empty")
    try:
        grid = DcGridModel(
            H=H,
            noise_sigma=float(kv.pop("noise_sigma", DEFAULT_NOISE_SIGMA)),
            state_mean=_vector(kv.pop("state_mean")) if "state_mean" in kv else DEFAULT_STATE_MEAN,
            state_std=_vector(kv.pop("state_std")) if "state_std" in kv else DEFAULT_STATE_STD,
        )
        shift = _vector(kv.pop("shift_c")) if "shift_c" in kv else default_shift()
        meters = kv.pop("target_meters", None)
        attack = AttackSpec(shift, tuple(int(t) for t in _vector(meters)) if meters else None)
        attack.vector(grid)
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from e
    if kv:
        raise ConfigError(f"{source}: unknown keys {sorted(kv)}")
    return grid, attack
