"""Evaluation metrics for attribution maps.

* gini    — spatial concentration of the sorted absolute map (0 uniform,
            (d-1)/d for a point mass);
* road    — faithfulness: does masking the top-p% salient cells hurt the
            ROI target more than equally sized random masks, averaged over
            a grid of masking percentages;
* lle_l2 / lle_cos — robustness: worst observed ratio of attribution
            change to input perturbation norm over K sampled draws, with
            the cosine variant comparing unit-normalized maps;
* impute  — the masking fill used by road: discrete harmonic interpolation
            from the unmasked cells plus Gaussian noise.

All randomness is keyed on (seed, draw index) only, never on the method
under evaluation, so every method sees identical perturbations and masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attribution import AttributionRequest, channel_sigma
from .autodiff import Tape
from .errors import AllMaskedError, ZeroMassError
from .fields import Field2D, StateTensor
from .toymodel import rollout_node

_LLE_SALT = 0x4C4C45  # "LLE"
_ROAD_SALT = 0x524F4144  # "ROAD"


@dataclass(frozen=True)
class RoadConfig:
    p_max: int = 15  # percent, inclusive
    k_rand: int = 5
    sigma_imp_frac: float = 0.1  # imputation noise, fraction of channel range
    seed: int = 42

    def __post_init__(self):
        if not 0 < self.p_max < 100:
            raise ValueError("p_max must be in (0, 100)")
        if self.k_rand < 1:
            raise ValueError("k_rand must be >= 1")

    def p_grid(self):
        return range(1, self.p_max + 1)


@dataclass(frozen=True)
class LleConfig:
    k_draws: int = 7
    sigma_frac: float = 0.1
    seed: int = 42

    def __post_init__(self):
        if self.k_draws < 1:
            raise ValueError("k_draws must be >= 1")


def gini(g: Field2D) -> float:
    """Concentration of |g|: sum_i (2i - d - 1) |g|_(i) / (d sum |g|),
    over the ascending-sorted absolute values."""
    a = np.sort(np.abs(g.values.astype(np.float64)).ravel())
    d = a.size
    total = a.sum()
    if total <= 0:
        raise ZeroMassError("gini of a zero map is undefined")
    i = np.arange(1, d + 1, dtype=np.float64)
    return float(np.sum((2 * i - d - 1) * a) / (d * total))


def _lle_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed ^ _LLE_SALT, k]))


def _lle_max(attr_fn, x: StateTensor, c_in: int, cfg: LleConfig, normalize: bool) -> float:
    sigma = channel_sigma(x, c_in, cfg.sigma_frac)

    def prep(field: Field2D) -> np.ndarray:
        v = field.values.astype(np.float64)
        if not normalize:
            return v
        n = np.linalg.norm(v)
        if n <= 0:
            raise ZeroMassError("cannot unit-normalize a zero attribution map")
        return v / n

    g0 = prep(attr_fn(x))
    worst = 0.0
    for k in range(cfg.k_draws):
        eps = _lle_rng(cfg.seed, k).normal(0.0, sigma, size=(x.spec.height, x.spec.width))
        values = np.array(x.values, dtype=np.float64)
        values[:, :, c_in] += eps
        gk = prep(attr_fn(StateTensor(x.spec, values.astype(np.float32))))
        ratio = float(np.linalg.norm(g0 - gk) / np.linalg.norm(eps))
        worst = max(worst, ratio)
    return worst


def lle_l2(attr_fn, x: StateTensor, c_in: int, cfg: LleConfig) -> float:
    """Worst-case ||G(x) - G(x + eps)||_2 / ||eps||_2 over K sampled draws.

    attr_fn maps a StateTensor to a Field2D and must be deterministic
    given its own seed; the eps draws depend only on (cfg.seed, k), so all
    methods see the same perturbations.
    """
    return _lle_max(attr_fn, x, c_in, cfg, normalize=False)


def lle_cos(attr_fn, x: StateTensor, c_in: int, cfg: LleConfig) -> float:
    """Same as lle_l2 on unit-normalized maps: structural change only."""
    return _lle_max(attr_fn, x, c_in, cfg, normalize=True)


def impute(x_in: Field2D, mask, sigma_imp: float, rng: np.random.Generator) -> Field2D:
    """Fill masked cells by discrete harmonic interpolation, then add
    N(0, sigma_imp^2) noise on the masked cells only.

    The fill is Jacobi iteration of 4-neighbor averaging (boundary cells
    average their in-grid neighbors), run to max change < 1e-6 with a
    10k-sweep cap. Unmasked cells are returned bit-identical.
    """
    mask = _as_mask(mask, x_in.spec)
    if not mask.any():
        raise ValueError("mask is empty")
    if mask.all():
        raise AllMaskedError("cannot impute when every cell is masked")

    v = x_in.values.astype(np.float64)
    fill = np.where(mask, float(v[~mask].mean()), v)
    for _ in range(10_000):
        padded = np.pad(fill, 1, mode="edge")
        neigh = (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]) / 4.0
        new = np.where(mask, neigh, v)
        delta = np.abs(new - fill)[mask].max()
        fill = new
        if delta < 1e-6:
            break
    if sigma_imp > 0:
        fill = fill + mask * rng.normal(0.0, sigma_imp, size=mask.shape)
    out = np.where(mask, fill, v).astype(np.float64)
    # keep unmasked cells bit-identical to the float32 input
    out32 = out.astype(np.float32)
    out32[~mask] = x_in.values[~mask]
    return Field2D(x_in.spec, out32)


def _as_mask(mask, spec) -> np.ndarray:
    if isinstance(mask, np.ndarray) and mask.dtype == bool:
        if mask.shape != (spec.height, spec.width):
            raise ValueError("mask shape must match grid")
        return mask
    out = np.zeros((spec.height, spec.width), dtype=bool)
    for i, j in mask:
        out[i, j] = True
    return out


def _roi_target(model, x_values: np.ndarray, req: AttributionRequest) -> float:
    tape = Tape()
    node = tape.constant(x_values.astype(np.float64))
    out = rollout_node(model, tape, node, req.steps)
    y = tape.roi_mean(tape.select_channel(out, req.c_out), req.roi)
    return float(y.value)


def _top_cells(map_values: np.ndarray, count: int) -> np.ndarray:
    """Boolean mask of the `count` largest |values|; ties go to the
    earlier cell in row-major order."""
    flat = np.abs(map_values.astype(np.float64)).ravel()
    # stable sort on (-value) keeps row-major order among ties
    order = np.argsort(-flat, kind="stable")[:count]
    mask = np.zeros(flat.size, dtype=bool)
    mask[order] = True
    return mask.reshape(map_values.shape)


def _road_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed ^ _ROAD_SALT, index]))


def road(method_map: Field2D, x: StateTensor, model, req: AttributionRequest, cfg: RoadConfig) -> float:
    """Binary ROAD score in [0, 1].

    For each masking percentage p, mask the top-p% salient cells of the
    input channel (harmonic fill + noise) and flag 1 iff the absolute ROI
    target change exceeds the mean change over k_rand random masks of
    identical size. The score is the mean flag over the p grid. Random
    masks are a function of (seed, p, k) only, shared across methods.
    """
    spec = x.spec
    d = spec.ncells
    sigma_imp = channel_sigma(x, req.c_in, cfg.sigma_imp_frac)
    y_clean = _roi_target(model, x.values, req)
    x_in = x.channel(req.c_in)

    def masked_target(mask: np.ndarray, rng: np.random.Generator) -> float:
        filled = impute(x_in, mask, sigma_imp, rng)
        values = np.array(x.values)
        values[:, :, req.c_in] = filled.values
        return _roi_target(model, values, req)

    flags = []
    for pi, p in enumerate(cfg.p_grid()):
        count = max(1, int(np.floor(p / 100.0 * d)))
        if count >= d:
            count = d - 1
        sal_mask = _top_cells(method_map.values, count)
        rng = _road_rng(cfg.seed, pi * (cfg.k_rand + 1))
        delta_sal = abs(y_clean - masked_target(sal_mask, rng))
        deltas_rand = []
        for k in range(cfg.k_rand):
            rng_k = _road_rng(cfg.seed, pi * (cfg.k_rand + 1) + 1 + k)
            cells = rng_k.choice(d, size=count, replace=False)
            rand_mask = np.zeros(d, dtype=bool)
            rand_mask[cells] = True
            deltas_rand.append(abs(y_clean - masked_target(rand_mask.reshape(spec.height, spec.width), rng_k)))
        flags.append(1.0 if delta_sal > np.mean(deltas_rand) else 0.0)
    return float(np.mean(flags))
