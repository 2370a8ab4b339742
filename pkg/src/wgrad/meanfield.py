"""Interacting-particle view of attention: tokens on the unit sphere.

Particles move along the tangent projection of an exponential similarity
average. The SA variant normalizes by the per-particle partition function
(softmax weights); the USA variant keeps the raw 1/n average and ascends
the interaction energy along the standard Wasserstein geometry, which is
what makes its energy monotone and testable. Projection weights are the
identity throughout.

Integration is RK4 plus renormalization to the sphere; optional tangent
Gaussian increments model per-step noise. The basin experiment perturbs
only the initial condition and integrates deterministically, looking for
trials that settle into different cluster configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, NonConvergenceError

CLUSTER_ANGLE = 0.1  # radians, single-linkage threshold


@dataclass(frozen=True)
class ParticleSystem:
    positions: np.ndarray  # (n, d) unit vectors
    beta: float
    variant: str = "usa"  # "sa" or "usa"
    kappa: float = 0.0  # noise scale; 0 = deterministic

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] < 2:
            raise ValueError("positions must be (n, d) with d >= 2")
        norms = np.linalg.norm(p, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("positions must be unit vectors")
        if self.beta <= 0:
            raise DomainError("beta must be > 0")
        if self.variant not in ("sa", "usa"):
            raise ValueError(f"unknown variant {self.variant!r}")
        p.setflags(write=False)
        object.__setattr__(self, "positions", p)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


def _drift(positions: np.ndarray, beta: float, variant: str) -> np.ndarray:
    """Tangent-projected interaction velocity for positions on the sphere."""
    k = np.exp(beta * (positions @ positions.T))  # (n, n)
    if variant == "sa":
        weights = k / k.sum(axis=1, keepdims=True)
    else:
        weights = k / positions.shape[0]
    pull = weights @ positions
    radial = np.sum(pull * positions, axis=1, keepdims=True)
    return pull - radial * positions


def velocity(sys: ParticleSystem) -> np.ndarray:
    """Current velocities; each is orthogonal to its particle's position."""
    return _drift(sys.positions, sys.beta, sys.variant)


def _renorm(p: np.ndarray) -> np.ndarray:
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def step(sys: ParticleSystem, dt: float, rng: np.random.Generator | None = None) -> ParticleSystem:
    """One RK4 step followed by renormalization to the sphere.

    With kappa > 0 a tangent Gaussian increment of scale
    sqrt(2/kappa) * sqrt(dt) is added before renormalizing; the rng is
    required in that case.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    # classical RK4 on the ambient extension of the field; stage points are
    # O(dt) off the sphere, which the extension tolerates, and the final
    # renormalization projects back
    p = sys.positions
    with np.errstate(over="ignore", invalid="ignore"):
        k1 = _drift(p, sys.beta, sys.variant)
        k2 = _drift(p + 0.5 * dt * k1, sys.beta, sys.variant)
        k3 = _drift(p + 0.5 * dt * k2, sys.beta, sys.variant)
        k4 = _drift(p + dt * k3, sys.beta, sys.variant)
        new = p + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(new)):
        # the unnormalized variant's drift grows like exp(beta)/n, so a step
        # size that is fine for the softmax variant can overflow here
        raise NonConvergenceError(
            f"integration diverged (dt={dt}, beta={sys.beta}, variant={sys.variant!r}); reduce dt"
        )
    if sys.kappa > 0:
        if rng is None:
            raise ValueError("kappa > 0 requires an rng")
        noise = rng.normal(0.0, 1.0, size=new.shape) * np.sqrt(2.0 / sys.kappa) * np.sqrt(dt)
        radial = np.sum(noise * new, axis=1, keepdims=True) / np.sum(new * new, axis=1, keepdims=True)
        new = new + noise - radial * new
    return replace(sys, positions=_renorm(new))


def interaction_energy(sys: ParticleSystem) -> float:
    """Empirical interaction energy (1 / 2 beta n^2) sum exp(beta <xi, xj>)."""
    k = np.exp(sys.beta * (sys.positions @ sys.positions.T))
    return float(k.sum() / (2.0 * sys.beta * sys.n**2))


def simulate(sys: ParticleSystem, dt: float, steps: int, rng=None, record_every: int = 0):
    """Integrate for `steps` steps; returns (final system, snapshots).

    Snapshots hold (step index, positions copy) every record_every steps
    (0 disables recording beyond start and end).
    """
    snaps = [(0, np.array(sys.positions))]
    cur = sys
    for i in range(1, steps + 1):
        cur = step(cur, dt, rng)
        if record_every and i % record_every == 0:
            snaps.append((i, np.array(cur.positions)))
    if snaps[-1][0] != steps:
        snaps.append((steps, np.array(cur.positions)))
    return cur, snaps


def cluster_count(positions: np.ndarray, angle: float = CLUSTER_ANGLE) -> int:
    """Single-linkage cluster count at an angular threshold."""
    n = positions.shape[0]
    cos_thresh = np.cos(angle)
    close = positions @ positions.T >= cos_thresh
    labels = np.full(n, -1)
    count = 0
    for i in range(n):
        if labels[i] >= 0:
            continue
        stack = [i]
        labels[i] = count
        while stack:
            j = stack.pop()
            for k in np.nonzero(close[j] & (labels < 0))[0]:
                labels[k] = count
                stack.append(k)
        count += 1
    return count


@dataclass(frozen=True)
class BasinReport:
    trials: int
    sigma_init: float
    pairwise_max: float  # max over trial pairs of mean particle distance
    pairwise_mean: float
    cluster_counts: list[int]
    divergent_pairs: int  # pairs ending with different cluster counts


def basin_experiment(
    sys: ParticleSystem,
    sigma_init: float,
    trials: int,
    horizon: int,
    dt: float = 1e-2,
    seed: int = 42,
) -> BasinReport:
    """Perturb the initial positions per trial, integrate deterministically,
    and compare the final configurations across trials."""
    if trials < 2:
        raise ValueError("trials must be >= 2")
    finals = []
    for t in range(trials):
        p = np.array(sys.positions)
        if sigma_init > 0:
            rng = np.random.Generator(np.random.Philox(key=[seed, t]))
            noise = rng.normal(0.0, sigma_init, size=p.shape)
            noise -= np.sum(noise * p, axis=1, keepdims=True) * p
            p = _renorm(p + noise)
        trial_sys = replace(sys, positions=p, kappa=0.0)
        final, _ = simulate(trial_sys, dt, horizon)
        finals.append(final.positions)

    dists = []
    counts = [cluster_count(f) for f in finals]
    divergent = 0
    for i in range(trials):
        for j in range(i + 1, trials):
            dists.append(float(np.linalg.norm(finals[i] - finals[j], axis=1).mean()))
            if counts[i] != counts[j]:
                divergent += 1
    return BasinReport(
        trials=trials,
        sigma_init=sigma_init,
        pairwise_max=max(dists),
        pairwise_mean=float(np.mean(dists)),
        cluster_counts=counts,
        divergent_pairs=divergent,
    )
