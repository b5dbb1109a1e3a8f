"""Two-component experiments with full weight tensors.

With only two input components the weight tensor W^l_{s1 s2} has N_L * d^2
entries and is optimized directly, without an MPS. This module trains such
classifiers on the toy tasks, renders decision grids, and runs the
generative experiment: sample points from a random "hidden" complex model
through the Born rule p(l, x) = |f^l(x)|^2, relearn the model by maximum
likelihood and measure the KL divergence as the sample size grows.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .data_pipeline import LabeledDataset, bayes_boundary, grid_centers, sample_gaussian_pair
from .exceptions import NumericalError, TensorError
from .feature_maps import LocalFeatureMap, map_values
from .logging_config import log_event, log_warning, timed
from .models import FeatureMapKind, GaussianPairParams, KlScanResult, ToySolver
from .outputs import write_csv
from .tensor_core import Tensor

# Sampling below this grid resolution is too coarse to resolve p(x | l)
MIN_SAMPLING_GRID = 64

# Densities below this contribute nothing to the KL divergence
KL_DENSITY_FLOOR = 1e-15

# A training point with |f|^2 below this makes the NLL step invalid
NLL_DENSITY_FLOOR = 1e-300


@dataclass(frozen=True)
class FullWeight:
    """Weight tensor W^l_{s1 s2} of shape (N_L, d, d)."""

    tensor: Tensor

    def __post_init__(self) -> None:
        if self.tensor.ndim != 3 or self.tensor.shape[1] != self.tensor.shape[2]:
            raise TensorError(f"full weight must be (N_L, d, d), got shape {self.tensor.shape}")
        if not np.all(np.isfinite(self.tensor)):
            raise TensorError("full weight contains non-finite values")

    @property
    def n_labels(self) -> int:
        """Number of labels."""
        return int(self.tensor.shape[0])

    @property
    def d(self) -> int:
        """Local dimension."""
        return int(self.tensor.shape[1])

    @property
    def norm(self) -> float:
        """Frobenius norm over all labels."""
        return float(np.linalg.norm(self.tensor.ravel()))


@dataclass(frozen=True)
class DecisionGrid:
    """Predicted label and margin at every cell midpoint of a G x G grid.

    Index [i1, i2] corresponds to ((i1 + 1/2) / G, (i2 + 1/2) / G).
    """

    labels: NDArray[np.int64]
    margin: NDArray[np.float64]

    @property
    def resolution(self) -> int:
        """Grid resolution G."""
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class GridDistribution:
    """Born-rule density |f^l(x)|^2 at cell midpoints.

    Attributes:
        density: (N_L, G, G) density values.
        cell_weight: Measure of one cell, (weight / G)^2 for d(mu) = weight dx
            per axis.
    """

    density: NDArray[np.float64]
    cell_weight: float

    @property
    def resolution(self) -> int:
        """Grid resolution G."""
        return int(self.density.shape[1])

    def total(self) -> float:
        """Midpoint-rule integral of the density over labels and the square."""
        return float(self.density.sum() * self.cell_weight)

    def masses(self) -> NDArray[np.float64]:
        """Per-cell probability masses, renormalized to sum to 1."""
        mass = self.density * self.cell_weight
        out: NDArray[np.float64] = mass / mass.sum()
        return out


def toy_feature_map(d: int) -> LocalFeatureMap:
    """Spin-coherent map of dimension d used by the two-component toys."""
    # spin_coherent with d=2 is the half-angle map
    if d < 2:
        raise ValueError(f"local dimension must be >= 2, got {d}")
    return LocalFeatureMap(kind=FeatureMapKind.SPIN_COHERENT, d=d)


# =============================================================================
# Scores and Classification
# =============================================================================


def full_scores(w: FullWeight, fmap: LocalFeatureMap, points: ArrayLike) -> Tensor:
    """Scores f^l(x) = sum W^l_{s t} phi^s(x1) phi^t(x2) for (n, 2) points."""
    pts = np.asarray(points, dtype=np.float64)
    phi = map_values(fmap, pts)
    scores: Tensor = np.einsum("lst,ns,nt->nl", w.tensor, phi[:, 0], phi[:, 1])
    return scores


def predict_full(w: FullWeight, fmap: LocalFeatureMap, points: ArrayLike) -> NDArray[np.int64]:
    """Label of largest |f^l| per point; ties go to the lowest label."""
    return np.argmax(np.abs(full_scores(w, fmap, points)), axis=1).astype(np.int64)


def _grid_flat(resolution: int) -> NDArray[np.float64]:
    centers = grid_centers(resolution)
    x1, x2 = np.meshgrid(centers, centers, indexing="ij")
    return np.stack([x1.ravel(), x2.ravel()], axis=-1)


def decision_grid(w: FullWeight, fmap: LocalFeatureMap, resolution: int) -> DecisionGrid:
    """Classify every cell midpoint of a G x G grid.

    The margin is the gap between the largest and second largest |f^l|.
    """
    magnitudes = np.abs(full_scores(w, fmap, _grid_flat(resolution)))
    labels = np.argmax(magnitudes, axis=1)
    ranked = np.sort(magnitudes, axis=1)
    margin = ranked[:, -1] - ranked[:, -2] if w.n_labels > 1 else ranked[:, -1]
    shape = (resolution, resolution)
    return DecisionGrid(labels=labels.reshape(shape).astype(np.int64), margin=margin.reshape(shape))


def disagreement_area(labels: NDArray[np.int64], reference: NDArray[np.int64]) -> float:
    """Fraction of the square where two label grids differ."""
    if labels.shape != reference.shape:
        raise ValueError(f"grid shapes differ: {labels.shape} vs {reference.shape}")
    return float(np.mean(labels != reference))


def boundary_cell_count(labels: NDArray[np.int64]) -> int:
    """Number of cells with a differently labeled edge neighbour."""
    edge = np.zeros(labels.shape, dtype=bool)
    vertical = labels[1:, :] != labels[:-1, :]
    horizontal = labels[:, 1:] != labels[:, :-1]
    edge[1:, :] |= vertical
    edge[:-1, :] |= vertical
    edge[:, 1:] |= horizontal
    edge[:, :-1] |= horizontal
    return int(edge.sum())


def write_grid_csv(grid: DecisionGrid, path: Path) -> None:
    """Write x1, x2, label, margin for every cell."""
    pts = _grid_flat(grid.resolution)
    rows = (
        [float(x1), float(x2), int(label), float(margin)]
        for (x1, x2), label, margin in zip(
            pts, grid.labels.ravel(), grid.margin.ravel(), strict=True
        )
    )
    write_csv(path, ["x1", "x2", "label", "margin"], rows)


# =============================================================================
# Quadratic Training
# =============================================================================


def _one_hot(labels: NDArray[np.int64], n_labels: int) -> NDArray[np.float64]:
    out = np.zeros((labels.shape[0], n_labels))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def quadratic_cost_full(w: FullWeight, fmap: LocalFeatureMap, dataset: LabeledDataset) -> float:
    """Half the summed squared deviation of the scores from one-hot targets."""
    residual = full_scores(w, fmap, dataset.inputs) - _one_hot(dataset.labels, w.n_labels)
    return 0.5 * float(np.sum(np.abs(residual) ** 2))


def quadratic_gradient_full(
    w: FullWeight, fmap: LocalFeatureMap, dataset: LabeledDataset
) -> Tensor:
    """Gradient of `quadratic_cost_full` with respect to the (real) weights."""
    phi = map_values(fmap, dataset.inputs)
    residual = full_scores(w, fmap, dataset.inputs) - _one_hot(dataset.labels, w.n_labels)
    grad: Tensor = np.einsum("nl,ns,nt->lst", residual, phi[:, 0], phi[:, 1])
    return grad


def _design_matrix(fmap: LocalFeatureMap, dataset: LabeledDataset) -> NDArray[np.float64]:
    """(n, d^2) rows phi(x1) (x) phi(x2), flattened like W^l."""
    phi = map_values(fmap, dataset.inputs)
    design: NDArray[np.float64] = np.einsum("ns,nt->nst", phi[:, 0], phi[:, 1]).reshape(
        dataset.n_examples, -1
    )
    return design


def solve_full_quadratic(dataset: LabeledDataset, d: int) -> FullWeight:
    """Exact minimizer of the quadratic cost by linear least squares.

    Each label's weights solve design @ w^l = delta(l, L_n) independently;
    a rank-deficient design gets the minimum-norm solution.

    Raises:
        NumericalError: If the solution is not finite.
    """
    if dataset.n_features != 2:
        raise ValueError(f"toy training needs two input components, got {dataset.n_features}")
    if dataset.n_examples == 0:
        return FullWeight(np.zeros((dataset.n_labels, d, d)))
    design = _design_matrix(toy_feature_map(d), dataset)
    try:
        solution, _, rank, _ = scipy.linalg.lstsq(
            design, _one_hot(dataset.labels, dataset.n_labels)
        )
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"least-squares solve failed: {e}") from e
    if not np.all(np.isfinite(solution)):
        raise NumericalError("least-squares solution is not finite")
    log_event("solve_full_quadratic", level="debug", d=d, rank=int(rank))
    return FullWeight(np.ascontiguousarray(solution.T).reshape(dataset.n_labels, d, d))


def train_full_quadratic(
    dataset: LabeledDataset,
    d: int,
    iters: int = 500,
    rate: float = 1.0,
    seed: int = 0,
    solver: ToySolver = ToySolver.GRADIENT,
) -> FullWeight:
    """Minimize the quadratic cost over all N_L * d^2 weights.

    With the gradient solver the step is rate / lambda_max, lambda_max being
    the largest eigenvalue of the design Gram matrix sum_n Phi_n Phi_n^T; a
    step that raises the cost is halved until it does not. The exact solver
    ignores `iters`, `rate` and `seed` and calls `solve_full_quadratic`.

    Args:
        dataset: Two-component points with labels.
        d: Local dimension of the spin-coherent map.
        iters: Gradient steps.
        rate: Step size in units of 1 / lambda_max.
        seed: Seed of the small random starting point.
        solver: Gradient descent or the exact least-squares minimizer.

    Returns:
        Trained weights.

    Raises:
        NumericalError: If the cost becomes non-finite.
    """
    if ToySolver(solver) is ToySolver.EXACT:
        return solve_full_quadratic(dataset, d)
    if dataset.n_features != 2:
        raise ValueError(f"toy training needs two input components, got {dataset.n_features}")
    fmap = toy_feature_map(d)
    rng = np.random.default_rng(seed)
    w = FullWeight(rng.normal(0.0, 1e-2, size=(dataset.n_labels, d, d)))

    design = _design_matrix(fmap, dataset)
    lam_max = float(np.linalg.eigvalsh(design.T @ design)[-1]) if dataset.n_examples else 1.0
    step = rate / max(lam_max, 1e-300)

    cost = quadratic_cost_full(w, fmap, dataset)
    for _ in range(iters):
        grad = quadratic_gradient_full(w, fmap, dataset)
        trial_step = step
        for _ in range(50):
            candidate = w.tensor - trial_step * grad
            if not np.all(np.isfinite(candidate)):
                raise NumericalError("quadratic training diverged")
            trial = FullWeight(candidate)
            trial_cost = quadratic_cost_full(trial, fmap, dataset)
            if trial_cost <= cost:
                w, cost = trial, trial_cost
                break
            trial_step *= 0.5
        else:
            break
        if not np.isfinite(cost):
            raise NumericalError("quadratic cost is not finite")
    log_event("train_full_quadratic", level="debug", d=d, iters=iters, cost=cost)
    return w


def overfitting_scan(
    params: GaussianPairParams,
    ds: tuple[int, ...] = (2, 6),
    seeds: tuple[int, ...] = tuple(range(10)),
    iters: int = 500,
    rate: float = 1.0,
    resolution: int = 64,
    solver: ToySolver = ToySolver.GRADIENT,
) -> dict[int, float]:
    """Median disagreement area with the Bayes boundary per local dimension.

    Every seed draws a fresh Gaussian training set; each d is trained on it
    and its decision grid compared with the analytic boundary.
    """
    reference = bayes_boundary(params, resolution)
    areas: dict[int, list[float]] = {d: [] for d in ds}
    for seed in seeds:
        data = sample_gaussian_pair(params, seed)
        for d in ds:
            w = train_full_quadratic(data, d, iters, rate, seed, solver=solver)
            grid = decision_grid(w, toy_feature_map(d), resolution)
            areas[d].append(disagreement_area(grid.labels, reference))
    return {d: float(np.median(v)) for d, v in areas.items()}


# =============================================================================
# Born-Rule Generative Model
# =============================================================================


def random_hidden_model(d: int, seed: int, n_labels: int = 2) -> FullWeight:
    """Complex Gaussian weights normalized to sum |W|^2 = 1."""
    rng = np.random.default_rng(seed)
    shape = (n_labels, d, d)
    tensor = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return FullWeight(tensor / np.linalg.norm(tensor.ravel()))


def label_probabilities(w: FullWeight, tol: float = 1e-8) -> tuple[float, ...]:
    """P_l = sum_{s1 s2} |W^l_{s1 s2}|^2 for a normalized model.

    Raises:
        TensorError: If sum |W|^2 differs from 1 by more than `tol`.
    """
    probs = np.sum(np.abs(w.tensor) ** 2, axis=(1, 2))
    if abs(float(probs.sum()) - 1.0) > tol:
        raise TensorError(f"weights are not normalized (sum |W|^2 = {probs.sum():.12g})")
    return tuple(float(p) for p in probs)


def grid_density(w: FullWeight, fmap: LocalFeatureMap, resolution: int) -> GridDistribution:
    """Evaluate |f^l|^2 at the midpoints of a G x G grid."""
    scores = full_scores(w, fmap, _grid_flat(resolution))
    density = (np.abs(scores) ** 2).T.reshape(w.n_labels, resolution, resolution)
    return GridDistribution(
        density=density, cell_weight=(fmap.measure_weight / resolution) ** 2
    )


def _require_born_map(fmap: LocalFeatureMap) -> None:
    if not fmap.is_orthonormal:
        raise ValueError(f"{fmap.kind.value} map is not orthonormal; Born sampling needs one")


def _inverse_cdf(weights: NDArray[np.float64], u: NDArray[np.float64]) -> NDArray[np.int64]:
    """Indices drawn from unnormalized cell weights given uniforms u in [0, 1)."""
    cdf = np.cumsum(weights)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, weights.shape[0] - 1).astype(np.int64)


def sample_points(
    w: FullWeight,
    fmap: LocalFeatureMap,
    n_samples: int,
    resolution: int,
    seed: int,
) -> LabeledDataset:
    """Draw labeled points from the Born distribution of a normalized model.

    A label is drawn from the label probabilities, then x1 from the
    grid-discretized marginal of p(x | l) and x2 from the conditional given
    the x1 cell, with uniform jitter inside the chosen cell.

    Raises:
        ValueError: If G is below 64, the map is not orthonormal or W is not
            normalized.
    """
    if resolution < MIN_SAMPLING_GRID:
        raise ValueError(f"grid resolution must be >= {MIN_SAMPLING_GRID}, got {resolution}")
    _require_born_map(fmap)
    probs = np.asarray(label_probabilities(w))
    rng = np.random.default_rng(seed)
    labels = rng.choice(w.n_labels, size=n_samples, p=probs / probs.sum())
    masses = grid_density(w, fmap, resolution).density

    inputs = np.zeros((n_samples, 2))
    for label in range(w.n_labels):
        mask = labels == label
        count = int(mask.sum())
        if count == 0:
            continue
        cell = masses[label]
        i1 = _inverse_cdf(cell.sum(axis=1), rng.random(count))
        u2 = rng.random(count)
        i2 = np.zeros(count, dtype=np.int64)
        for row in np.unique(i1):
            hits = np.flatnonzero(i1 == row)
            i2[hits] = _inverse_cdf(cell[row], u2[hits])
        jitter = rng.random((count, 2))
        inputs[mask] = (np.stack([i1, i2], axis=-1) + jitter) / resolution

    return LabeledDataset(
        inputs=np.clip(inputs, 0.0, 1.0),
        labels=labels.astype(np.int64),
        n_labels=w.n_labels,
        provenance={"source": "born_sampling", "seed": seed, "grid": resolution},
    )


def nll_cost(w: FullWeight, fmap: LocalFeatureMap, dataset: LabeledDataset) -> float:
    """Negative log-likelihood -sum_n log |f^{L_n}(x_n)|^2."""
    scores = full_scores(w, fmap, dataset.inputs)
    chosen = scores[np.arange(dataset.n_examples), dataset.labels]
    with np.errstate(divide="ignore"):
        return float(-np.sum(np.log(np.abs(chosen) ** 2)))


def nll_gradient(w: FullWeight, fmap: LocalFeatureMap, dataset: LabeledDataset) -> Tensor:
    """Gradient of `nll_cost` packed as dC/dRe(W) + i dC/dIm(W).

    This equals 2 dC/dconj(W) = -2 sum_n conj(Phi_n) / conj(f_n) at label L_n.
    """
    phi = map_values(fmap, dataset.inputs)
    scores = full_scores(w, fmap, dataset.inputs)
    chosen = scores[np.arange(dataset.n_examples), dataset.labels]
    coeff = np.zeros((dataset.n_examples, w.n_labels), dtype=np.complex128)
    coeff[np.arange(dataset.n_examples), dataset.labels] = -2.0 / np.conj(chosen)
    grad: Tensor = np.einsum("nl,ns,nt->lst", coeff, np.conj(phi[:, 0]), np.conj(phi[:, 1]))
    return grad


def _normalized(tensor: Tensor) -> FullWeight:
    return FullWeight(tensor / np.linalg.norm(tensor.ravel()))


def train_full_nll(
    dataset: LabeledDataset,
    d: int = 2,
    iters: int = 300,
    rate: float = 0.5,
    seed: int = 0,
) -> FullWeight:
    """Maximum-likelihood fit of a complex model with the phase-modulated map.

    Each step moves W against the gradient (divided by the sample count) and
    renormalizes to sum |W|^2 = 1. A step that raises the cost, or leaves a
    training point with |f|^2 below 1e-300, is rejected and the rate halved;
    an accepted step grows the rate by 10%.

    Args:
        dataset: Sampled points with labels.
        d: Local dimension (must be 2).
        iters: Gradient steps.
        rate: Initial step size.
        seed: Seed of the random starting point.

    Returns:
        Normalized learned weights.

    Raises:
        NumericalError: If the starting point has zero likelihood.
    """
    fmap = LocalFeatureMap(kind=FeatureMapKind.PHASE_MODULATED, d=d)
    w = random_hidden_model(d, seed, dataset.n_labels)
    cost = nll_cost(w, fmap, dataset)
    if not np.isfinite(cost):
        raise NumericalError("starting model assigns zero density to a training point")
    n = max(dataset.n_examples, 1)
    rejected = 0
    for _ in range(iters):
        grad = nll_gradient(w, fmap, dataset) / n
        trial = _normalized(w.tensor - rate * grad)
        scores = full_scores(trial, fmap, dataset.inputs)
        chosen = np.abs(scores[np.arange(dataset.n_examples), dataset.labels]) ** 2
        if np.all(chosen >= NLL_DENSITY_FLOOR):
            trial_cost = nll_cost(trial, fmap, dataset)
        else:
            log_warning("NLL step rejected: a training point has vanishing density")
            trial_cost = np.inf
        if trial_cost <= cost:
            w, cost = trial, trial_cost
            rate *= 1.1
        else:
            rejected += 1
            rate *= 0.5
            if rate < 1e-12:
                break
    if rejected:
        log_event("train_full_nll", level="debug", rejected=rejected, cost=cost)
    return w


def kl_divergence(
    w_true: FullWeight, w_learned: FullWeight, fmap: LocalFeatureMap, resolution: int
) -> float:
    """KL divergence of the learned Born distribution from the true one.

    Both densities are evaluated at the midpoints of a G x G grid and
    renormalized to unit mass over labels and cells; cells where the true
    mass is below 1e-15 contribute nothing.
    """
    _require_born_map(fmap)
    p = grid_density(w_true, fmap, resolution).masses()
    q = grid_density(w_learned, fmap, resolution).masses()
    keep = p >= KL_DENSITY_FLOOR * (fmap.measure_weight / resolution) ** 2
    if np.any(q[keep] <= 0.0):
        return float("inf")
    return float(np.sum(p[keep] * np.log(p[keep] / q[keep])))


def _kl_trial(
    size: int, child: np.random.SeedSequence, d: int, resolution: int, iters: int, rate: float
) -> float:
    hidden_seed, sample_seed, init_seed = (int(s) for s in child.generate_state(3))
    fmap = LocalFeatureMap(kind=FeatureMapKind.PHASE_MODULATED, d=d)
    with timed("kl_trial", size=size):
        hidden = random_hidden_model(d, hidden_seed)
        samples = sample_points(hidden, fmap, size, resolution, sample_seed)
        learned = train_full_nll(samples, d, iters, rate, init_seed)
        return kl_divergence(hidden, learned, fmap, resolution)


def fit_power_law(
    sizes: ArrayLike, values: ArrayLike
) -> tuple[float | None, float | None]:
    """Exponent p and prefactor c of values ~ c * sizes^(-p).

    A straight-line least-squares fit of log(values) against log(sizes).
    Returns (None, None) with fewer than two sizes or any value <= 0.
    """
    n = np.asarray(sizes, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if n.size < 2 or np.any(v <= 0.0) or np.any(n <= 0.0):
        return None, None
    design = np.vstack([np.ones_like(n), np.log(n)]).T
    (intercept, slope), *_ = np.linalg.lstsq(design, np.log(v), rcond=None)
    return float(-slope), float(np.exp(intercept))


def kl_scan(
    sizes: tuple[int, ...] | list[int],
    trials: int,
    d: int = 2,
    resolution: int = 128,
    seed: int = 0,
    iters: int = 300,
    rate: float = 0.5,
    threads: int = 1,
) -> KlScanResult:
    """Average KL divergence of relearned models per sample size.

    Every (size, trial) pair gets its own child seed: a fresh hidden model is
    drawn, sampled, relearned and compared. The mean KL per size is fitted
    by sigma / sqrt(N_s) through the origin, and separately by c * N_s^(-p)
    on log-log axes to report the observed decay exponent p.

    Args:
        sizes: Increasing sample sizes.
        trials: Trials per size.
        d: Local dimension (2 for the phase-modulated map).
        resolution: Grid resolution for sampling and KL quadrature.
        seed: Root seed.
        iters: NLL training steps per trial.
        rate: NLL initial step size.
        threads: Trials run concurrently on this many threads.

    Returns:
        KlScanResult with per-size statistics and the fit.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:], strict=False)):
        raise ValueError(f"sizes must be non-empty and strictly increasing, got {list(sizes)}")
    if d != 2:
        raise ValueError(f"the phase-modulated map requires d = 2, got {d}")
    if resolution < MIN_SAMPLING_GRID:
        raise ValueError(f"grid resolution must be >= {MIN_SAMPLING_GRID}, got {resolution}")

    children = np.random.SeedSequence(seed).spawn(len(sizes) * trials)
    jobs = [
        (size, children[i * trials + t]) for i, size in enumerate(sizes) for t in range(trials)
    ]

    def run(job: tuple[int, np.random.SeedSequence]) -> float:
        return _kl_trial(job[0], job[1], d, resolution, iters, rate)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(run, jobs))
    else:
        values = [run(job) for job in jobs]

    table = np.asarray(values).reshape(len(sizes), trials)
    mean_kl = table.mean(axis=1)
    std_kl = table.std(axis=1)
    u = 1.0 / np.sqrt(np.asarray(sizes, dtype=np.float64))
    sigma = float(np.dot(mean_kl, u) / np.dot(u, u))
    residual = float(np.sqrt(np.mean((mean_kl - sigma * u) ** 2)))
    exponent, prefactor = fit_power_law(sizes, mean_kl)
    for size, mean in zip(sizes, mean_kl, strict=True):
        log_event("kl_scan", size=size, mean_kl=float(mean))
    if np.any(np.diff(mean_kl) >= 0):
        log_warning("mean KL divergence is not decreasing with sample size")
    return KlScanResult(
        sizes=list(sizes),
        mean_kl=[float(v) for v in mean_kl],
        std_kl=[float(v) for v in std_kl],
        sigma=sigma,
        residual=residual,
        exponent=exponent,
        prefactor=prefactor,
        trials=trials,
        grid=resolution,
    )


def write_kl_scan_csv(result: KlScanResult, path: Path) -> None:
    """Write N_s, mean_kl, std_kl rows."""
    rows: list[list[Any]] = [
        [size, mean, std]
        for size, mean, std in zip(result.sizes, result.mean_kl, result.std_kl, strict=True)
    ]
    write_csv(path, ["n_samples", "mean_kl", "std_kl"], rows)
