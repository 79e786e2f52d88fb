"""Ensemble fusion of multiple models' segmentations.

Three fusion routes are provided: voxel-wise probability averaging (used
within one model's cross-validation folds), plain majority voting, and
binary STAPLE — an expectation-maximization estimate of the latent true
mask together with each rater's sensitivity/specificity.  Multi-label
fusion runs STAPLE independently per evaluated region and recombines the
consensus masks through the deterministic label priority.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DegenerateInput, EmptyInput, RegionMismatch, TooFewRaters
from .postprocess import PostprocessConfig, et_threshold_relabel
from .volume import (
    BRATS_LABELS,
    REGIONS,
    LabelVolume,
    ProbabilityVolume,
    RegionMask,
    binarize,
    compose_regions,
    decompose_regions,
    require_same_geometry,
)

FOLD_PROBABILITY_THRESHOLD = 0.5


@dataclass(frozen=True)
class RaterPerformance:
    """Estimated true-positive and true-negative rates of one rater."""

    sensitivity: float
    specificity: float


@dataclass(frozen=True)
class StapleConfig:
    """Convergence and conditioning controls for the EM fusion.

    ``prior`` selects the stationary foreground prior of the E-step:
    ``"prevalence"`` (default) is the scalar mean fraction of positive
    rater decisions; ``"voxelwise"`` is the per-voxel mean of the rater
    decisions; a float in (0, 1) fixes an explicit scalar.  The scalar
    prevalence is the default because a persistent per-voxel prior lets
    isolated votes on rare structures reinforce themselves until the
    consensus collapses to the union of all raters.

    ``clamp`` keeps the performance estimates strictly inside (0, 1) so
    the E-step never takes log(0) and unanimity cannot freeze the
    iteration.
    """

    max_iter: int = 50
    tol: float = 1e-6
    prior: float | str = "prevalence"
    clamp: float = 1e-6

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0 < self.clamp < 0.5:
            raise ValueError("clamp must lie in (0, 0.5)")
        if isinstance(self.prior, str):
            if self.prior not in ("prevalence", "voxelwise"):
                raise ValueError(f"unknown prior mode {self.prior!r}")
        elif not 0 < self.prior < 1:
            raise ValueError("scalar prior must lie in (0, 1)")


@dataclass(frozen=True)
class StapleResult:
    """EM output: consensus weights, per-rater performance, and the
    log-likelihood trace (non-decreasing, one entry per iteration)."""

    weights: ProbabilityVolume
    performances: tuple[RaterPerformance, ...]
    iterations: int
    loglik_trace: tuple[float, ...]
    consensus: RegionMask


def _require_same_region(volumes) -> None:
    regions = {v.region for v in volumes}
    if len(regions) > 1:
        raise RegionMismatch(f"mixed region tags: {sorted(r.value for r in regions)}")


def average_probabilities(probs: list[ProbabilityVolume]) -> ProbabilityVolume:
    """Voxel-wise arithmetic mean of probability volumes for one region."""
    if not probs:
        raise EmptyInput("no probability volumes to average")
    require_same_geometry(*probs)
    _require_same_region(probs)
    mean = np.mean([p.prob for p in probs], axis=0)
    return ProbabilityVolume(mean, probs[0].region, probs[0].spacing, probs[0].affine)


def majority_vote(raters: list[LabelVolume]) -> LabelVolume:
    """Per-voxel plurality label; ties go to the smallest label value."""
    if not raters:
        raise EmptyInput("no raters to vote")
    require_same_geometry(*raters)
    counts = np.zeros((len(BRATS_LABELS),) + raters[0].dims, dtype=np.int32)
    for rater in raters:
        for idx, label in enumerate(BRATS_LABELS):
            counts[idx] += rater.labels == label
    # argmax returns the first maximum; BRATS_LABELS is ascending, so ties
    # resolve to the smallest label.
    winner = np.asarray(BRATS_LABELS, dtype=np.uint8)[counts.argmax(axis=0)]
    return LabelVolume(winner, raters[0].spacing, raters[0].affine)


def staple_binary(raters: list[RegionMask], cfg: StapleConfig = StapleConfig()) -> StapleResult:
    """Binary STAPLE: EM over the raters' hard decisions.

    E-step: posterior weight of each voxel being foreground, from the
    prior and the current per-rater (sensitivity, specificity).
    M-step: each rater's sensitivity becomes the weight mass it marked
    positive over the total weight mass; specificity analogously on the
    complement.  Iteration stops when the mean absolute weight change
    drops below ``cfg.tol`` or after ``cfg.max_iter`` rounds.
    """
    if len(raters) < 2:
        raise TooFewRaters(f"STAPLE needs >= 2 raters, got {len(raters)}")
    require_same_geometry(*raters)
    _require_same_region(raters)

    decisions = np.stack([r.member.ravel(order="F") for r in raters])  # (R, N)
    if decisions.all() or not decisions.any():
        raise DegenerateInput("every rater marks every voxel identically")
    d = decisions.astype(np.float64)

    if cfg.prior == "prevalence":
        prior = np.full(d.shape[1], d.mean())
    elif cfg.prior == "voxelwise":
        prior = d.mean(axis=0)
    else:
        prior = np.full(d.shape[1], float(cfg.prior))
    with np.errstate(divide="ignore"):  # prior of exactly 0/1 is meaningful
        log_prior = np.log(prior)
        log_not_prior = np.log1p(-prior)

    lo, hi = cfg.clamp, 1.0 - cfg.clamp
    sens = np.full(len(raters), hi)
    spec = np.full(len(raters), hi)

    weights = prior
    trace: list[float] = []
    iterations = 0
    for _ in range(cfg.max_iter):
        iterations += 1
        # E-step, in log space: log a_i (foreground) vs log b_i (background)
        log_a = log_prior + d.T @ np.log(sens) + (1.0 - d).T @ np.log1p(-sens)
        log_b = log_not_prior + d.T @ np.log1p(-spec) + (1.0 - d).T @ np.log(spec)
        new_weights = expit(log_a - log_b)
        trace.append(float(np.logaddexp(log_a, log_b).sum()))

        # M-step; clamping is the constrained maximizer because the
        # objective is concave in each rate separately.
        mass = new_weights.sum()
        comass = (1.0 - new_weights).sum()
        sens = np.clip((d @ new_weights) / mass, lo, hi)
        spec = np.clip(((1.0 - d) @ (1.0 - new_weights)) / comass, lo, hi)

        delta = float(np.abs(new_weights - weights).mean())
        weights = new_weights
        if delta < cfg.tol:
            break

    first = raters[0]
    weight_volume = ProbabilityVolume(
        weights.reshape(first.dims, order="F"), first.region, first.spacing, first.affine
    )
    return StapleResult(
        weights=weight_volume,
        performances=tuple(RaterPerformance(float(p), float(q)) for p, q in zip(sens, spec)),
        iterations=iterations,
        loglik_trace=tuple(trace),
        consensus=binarize(weight_volume, 0.5),
    )


def staple_regions(methods: list[LabelVolume], cfg: StapleConfig = StapleConfig()) -> LabelVolume:
    """Fuse label volumes by running binary STAPLE per evaluated region.

    Regions all raters predict empty stay empty, and regions on which all
    raters agree exactly are passed through (both are EM fixed points), so
    STAPLE only runs where there is disagreement.  The three consensus
    masks are recombined through the ET > TC > WT label priority.
    """
    if len(methods) < 2:
        raise TooFewRaters(f"need >= 2 method predictions, got {len(methods)}")
    require_same_geometry(*methods)
    per_method = [compose_regions(m) for m in methods]

    consensus: list[RegionMask] = []
    for region_idx, region in enumerate(REGIONS):
        masks = [triple[region_idx] for triple in per_method]
        reference = masks[0]
        if all(np.array_equal(m.member, reference.member) for m in masks[1:]):
            consensus.append(reference)
        else:
            consensus.append(staple_binary(masks, cfg).consensus)
    return decompose_regions(*consensus)


def ensemble_pipeline(
    per_method_fold_probs: list[list[tuple[ProbabilityVolume, ProbabilityVolume, ProbabilityVolume]]],
    cfg: StapleConfig = StapleConfig(),
    post: PostprocessConfig = PostprocessConfig(),
) -> LabelVolume:
    """Full fusion pipeline across methods and cross-validation folds.

    Per method: fold probabilities are averaged per region, thresholded at
    0.5, and collapsed to one label volume.  Across methods: per-region
    STAPLE, label recombination, then the ET voxel-count post-processing.

    Input layout: one entry per method, each a list of per-fold
    (ET, TC, WT) probability triples sharing geometry.
    """
    if len(per_method_fold_probs) < 2:
        raise TooFewRaters(f"need >= 2 methods, got {len(per_method_fold_probs)}")
    method_labels: list[LabelVolume] = []
    for method_idx, folds in enumerate(per_method_fold_probs):
        if not folds:
            raise EmptyInput(f"method {method_idx} has no folds")
        masks = []
        for region_idx, region in enumerate(REGIONS):
            fold_probs = [fold[region_idx] for fold in folds]
            for p in fold_probs:
                if p.region is not region:
                    raise RegionMismatch(
                        f"method {method_idx}: expected {region.value} at slot "
                        f"{region_idx}, got {p.region.value}"
                    )
            averaged = average_probabilities(fold_probs)
            masks.append(binarize(averaged, FOLD_PROBABILITY_THRESHOLD))
        method_labels.append(decompose_regions(*masks))
    fused = staple_regions(method_labels, cfg)
    return et_threshold_relabel(fused, post)
