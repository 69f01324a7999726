"""Two-level scenario tree of forecast capacity factors and forecast errors.

Day-ahead scenarios hold forecast factors ``rho_hat`` sampled from each
device's stationary marginal; conditional balancing scenarios hold realized
factors ``rho_tilde`` drawn from a Beta forecast-error law whose mean equals
the forecast and whose standard deviation follows
``sigma(rho) = sigma0 + sigma1 * rho * (1 - rho)``.

All sampling is reproducible: each (device, level, scenario) gets its own
counter-based substream derived from the user seed, so results do not depend
on evaluation order or thread count.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .system import PowerSystem

_PROB_TOL = 1e-9


def _substream(seed: int, *tags) -> np.random.Generator:
    """Deterministic generator for a (seed, tags...) address."""
    keys = [zlib.crc32(str(t).encode("utf-8")) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(keys)))


# -- marginal forecast distributions ----------------------------------------


@dataclass(frozen=True)
class ForecastDistribution:
    """Marginal distribution of a per-unit forecast factor on [0, 1].

    ``kind`` is one of:

    * ``"point"``   -- degenerate at ``value``;
    * ``"beta"``    -- Beta(alpha, beta);
    * ``"histogram"`` -- piecewise-uniform over ``edges`` with bin ``masses``.

    ``group`` names a perfect-correlation group: devices sharing a group
    receive identical day-ahead draws.
    """

    kind: str
    value: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    edges: tuple[float, ...] = ()
    masses: tuple[float, ...] = ()
    group: Optional[str] = None

    def __post_init__(self):
        if self.kind == "point":
            if not 0.0 <= self.value <= 1.0:
                raise ValueError(f"point mass {self.value} outside [0, 1]")
        elif self.kind == "beta":
            if self.alpha <= 0 or self.beta <= 0:
                raise ValueError("beta distribution needs positive shape parameters")
        elif self.kind == "histogram":
            edges = np.asarray(self.edges, dtype=float)
            masses = np.asarray(self.masses, dtype=float)
            if edges.size < 2 or masses.size != edges.size - 1:
                raise ValueError("histogram needs len(edges) == len(masses) + 1 >= 2")
            if np.any(np.diff(edges) <= 0):
                raise ValueError("histogram edges must be strictly increasing")
            if edges[0] < -_PROB_TOL or edges[-1] > 1.0 + _PROB_TOL:
                raise ValueError("histogram support must lie within [0, 1]")
            if np.any(masses < 0) or abs(masses.sum() - 1.0) > _PROB_TOL:
                raise ValueError("histogram masses must be nonnegative and sum to 1")
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    def mean(self) -> float:
        if self.kind == "point":
            return self.value
        if self.kind == "beta":
            return self.alpha / (self.alpha + self.beta)
        edges = np.asarray(self.edges)
        mids = 0.5 * (edges[:-1] + edges[1:])
        return float(np.dot(mids, self.masses))

    def variance(self) -> float:
        if self.kind == "point":
            return 0.0
        if self.kind == "beta":
            a, b = self.alpha, self.beta
            return a * b / ((a + b) ** 2 * (a + b + 1.0))
        edges = np.asarray(self.edges)
        mids = 0.5 * (edges[:-1] + edges[1:])
        widths = edges[1:] - edges[:-1]
        m = self.mean()
        # within-bin uniform variance plus between-bin spread
        return float(np.dot(self.masses, (mids - m) ** 2 + widths**2 / 12.0))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "point":
            return np.full(n, self.value)
        if self.kind == "beta":
            return rng.beta(self.alpha, self.beta, size=n)
        edges = np.asarray(self.edges)
        masses = np.asarray(self.masses, dtype=float)
        masses = masses / masses.sum()
        bins = rng.choice(masses.size, size=n, p=masses)
        lo = edges[bins]
        hi = edges[bins + 1]
        return lo + rng.random(n) * (hi - lo)


# -- conditional forecast-error model ----------------------------------------


@dataclass(frozen=True)
class ErrorModel:
    """Beta forecast-error law conditional on the forecast factor.

    The realized factor given forecast ``rho`` is Beta-distributed with mean
    ``rho`` and standard deviation ``sigma0 + sigma1 * rho * (1 - rho)``.
    The Beta moment condition requires ``var < rho * (1 - rho)``; when
    ``clip`` is set (default) the standard deviation is capped at
    ``max_std_fraction`` of that bound, otherwise an infeasible request
    raises ``ValueError``.
    """

    sigma0: float = 0.01
    sigma1: float = 0.35
    clip: bool = True
    max_std_fraction: float = 0.95

    def std(self, rho_hat: float) -> float:
        return self.sigma0 + self.sigma1 * rho_hat * (1.0 - rho_hat)

    def beta_params(self, rho_hat: float) -> Optional[tuple[float, float]]:
        """Shape parameters for the realized factor; None when degenerate."""
        if not 0.0 <= rho_hat <= 1.0:
            raise ValueError(f"forecast factor {rho_hat} outside [0, 1]")
        sigma = self.std(rho_hat)
        if sigma <= 0.0:
            return None
        bound = rho_hat * (1.0 - rho_hat)
        if bound <= 0.0:
            # Mean at the support boundary: only a point mass is feasible.
            if self.clip:
                return None
            raise ValueError(
                f"forecast-error stdev {sigma} infeasible for rho_hat={rho_hat}"
            )
        cap = self.max_std_fraction * np.sqrt(bound)
        if sigma > cap:
            if not self.clip:
                raise ValueError(
                    f"forecast-error stdev {sigma} infeasible for rho_hat={rho_hat}"
                    f" (requires < {np.sqrt(bound):.6g})"
                )
            sigma = cap
        nu = bound / sigma**2 - 1.0
        return rho_hat * nu, (1.0 - rho_hat) * nu


# -- scenario tree ------------------------------------------------------------


@dataclass
class ScenarioTree:
    """Forecast factors per day-ahead scenario with conditional realizations.

    ``rho_hat[d]`` has shape (n_s,) and ``rho_tilde[d]`` shape (n_s, n_r)
    for every device id ``d``; ``pi_sr[s]`` are probabilities conditional
    on scenario ``s``.
    """

    pi_s: np.ndarray
    pi_sr: np.ndarray
    rho_hat: dict[str, np.ndarray]
    rho_tilde: dict[str, np.ndarray]
    seed: Optional[int] = None

    @property
    def n_s(self) -> int:
        return int(self.pi_s.size)

    @property
    def n_r(self) -> int:
        return int(self.pi_sr.shape[1])

    def rho_hat_for(self, device_id: str, s: int) -> float:
        arr = self.rho_hat.get(device_id)
        return 1.0 if arr is None else float(arr[s])

    def rho_tilde_for(self, device_id: str, s: int, r: int) -> float:
        arr = self.rho_tilde.get(device_id)
        return 1.0 if arr is None else float(arr[s, r])

    def day_ahead_only(self) -> "ScenarioTree":
        """Collapse to a single deterministic balancing branch per scenario."""
        rk = {d: a[:, None].copy() for d, a in self.rho_hat.items()}
        return ScenarioTree(
            pi_s=self.pi_s.copy(),
            pi_sr=np.ones((self.n_s, 1)),
            rho_hat={d: a.copy() for d, a in self.rho_hat.items()},
            rho_tilde=rk,
            seed=self.seed,
        )


def sample_day_ahead(dist: ForecastDistribution, n_s: int, seed: int) -> np.ndarray:
    """Draw ``n_s`` equiprobable forecast factors from a marginal."""
    if n_s < 1:
        raise ValueError("n_s must be at least 1")
    rng = _substream(seed, "day-ahead", dist.group or "")
    return dist.sample(rng, n_s)


def sample_errors(
    rho_hat: float, model: ErrorModel, n_r: int, seed: int
) -> np.ndarray:
    """Draw ``n_r`` equiprobable realized factors conditional on a forecast."""
    if n_r < 1:
        raise ValueError("n_r must be at least 1")
    params = model.beta_params(rho_hat)
    if params is None:
        return np.full(n_r, rho_hat)
    rng = _substream(seed, "errors")
    a, b = params
    return rng.beta(a, b, size=n_r)


def build_tree(
    system: PowerSystem,
    dists: Mapping[str, ForecastDistribution],
    error_models: Mapping[str, ErrorModel] | None,
    n_s: int,
    n_r: int,
    seed: int,
) -> ScenarioTree:
    """Sample the full two-level tree for every device of the system.

    Devices without a marginal distribution keep ``rho = 1`` throughout;
    devices without an error model keep ``rho_tilde = rho_hat``.  Devices
    whose distributions share a ``group`` receive identical draws.
    """
    if n_s < 1 or n_r < 1:
        raise ValueError("n_s and n_r must be at least 1")
    error_models = error_models or {}
    device_ids = system.device_ids()
    for d in dists:
        if d not in device_ids:
            raise KeyError(f"forecast distribution for unknown device {d!r}")
    for d in error_models:
        if d not in device_ids:
            raise KeyError(f"error model for unknown device {d!r}")

    rho_hat: dict[str, np.ndarray] = {}
    group_draws: dict[str, np.ndarray] = {}
    for dev in device_ids:
        dist = dists.get(dev)
        if dist is None:
            rho_hat[dev] = np.ones(n_s)
            continue
        key = dist.group if dist.group is not None else f"device:{dev}"
        if key not in group_draws:
            group_draws[key] = dist.sample(_substream(seed, "day-ahead", key), n_s)
        rho_hat[dev] = group_draws[key].copy()

    rho_tilde: dict[str, np.ndarray] = {}
    for dev in device_ids:
        model = error_models.get(dev)
        if model is None:
            rho_tilde[dev] = np.repeat(rho_hat[dev][:, None], n_r, axis=1)
            continue
        out = np.empty((n_s, n_r))
        for s in range(n_s):
            params = model.beta_params(float(rho_hat[dev][s]))
            if params is None:
                out[s, :] = rho_hat[dev][s]
            else:
                rng = _substream(seed, "errors", dev, s)
                out[s, :] = rng.beta(params[0], params[1], size=n_r)
        rho_tilde[dev] = out

    tree = ScenarioTree(
        pi_s=np.full(n_s, 1.0 / n_s),
        pi_sr=np.full((n_s, n_r), 1.0 / n_r),
        rho_hat=rho_hat,
        rho_tilde=rho_tilde,
        seed=seed,
    )
    problems = validate_tree(tree)
    if problems:
        raise ValueError("generated tree violates invariants: " + "; ".join(problems))
    return tree


def validate_tree(tree: ScenarioTree) -> list[str]:
    """Check probability normalization and factor ranges; never raises."""
    v: list[str] = []
    if abs(tree.pi_s.sum() - 1.0) > _PROB_TOL:
        v.append(f"day-ahead probabilities sum to {tree.pi_s.sum()!r}, not 1")
    if np.any(tree.pi_s < 0) or np.any(tree.pi_sr < 0):
        v.append("negative scenario probability")
    if tree.pi_sr.shape[0] != tree.n_s:
        v.append("pi_sr row count does not match the day-ahead scenario count")
    else:
        bad = np.flatnonzero(np.abs(tree.pi_sr.sum(axis=1) - 1.0) > _PROB_TOL)
        if bad.size:
            v.append(f"conditional probabilities do not sum to 1 for s={bad.tolist()}")
    for dev, arr in tree.rho_hat.items():
        if arr.shape != (tree.n_s,):
            v.append(f"{dev}: rho_hat has shape {arr.shape}, expected ({tree.n_s},)")
        elif np.any(arr < -_PROB_TOL) or np.any(arr > 1.0 + _PROB_TOL):
            v.append(f"{dev}: forecast factor outside [0, 1]")
    for dev, arr in tree.rho_tilde.items():
        if arr.shape != (tree.n_s, tree.n_r):
            v.append(
                f"{dev}: rho_tilde has shape {arr.shape}, expected "
                f"({tree.n_s}, {tree.n_r})"
            )
        elif np.any(arr < -_PROB_TOL) or np.any(arr > 1.0 + _PROB_TOL):
            v.append(f"{dev}: realized factor outside [0, 1]")
        if dev not in tree.rho_hat:
            v.append(f"{dev}: realized factors without forecast factors")
    return v
