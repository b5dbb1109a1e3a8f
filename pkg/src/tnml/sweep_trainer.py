"""Two-site sweeping optimizer for MPS classifiers.

One bond visit merges the two sites of the active bond into a bond tensor B,
takes a gradient step on the quadratic cost

    C = 1/2 sum_n sum_l |f^l(x_n) - delta(l, L_n)|^2,

and splits B back into two sites by truncated SVD, moving the label one site
in the sweep direction. Per-example projections of the frozen sites outside
the bond are kept in an `EnvironmentCache` and advanced by one site per step.

Scores and gradients never build the projected inputs explicitly. With
X = left_env (x) phi(x_j) and Y = phi(x_{j+1}) (x) right_env, the scores are
f = X . B . Y and the gradient is X^T (Y (x) residual), both computed in
chunks of examples that may run on a thread pool.
"""

import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any, TypeVar

import numpy as np
from numpy.typing import NDArray

from .data_pipeline import EncodedDataset
from .exceptions import CacheError, NumericalError, TensorError
from .logging_config import log_event, log_warning
from .models import (
    BondRecord,
    EvalMetrics,
    SweepDirection,
    SweepRecord,
    SweepReport,
    TrainConfig,
)
from .mps_model import (
    MpsClassifier,
    canonical_to_mps,
    canonicalize,
    contract_left,
    contract_right,
    evaluate_batch,
    left_environment,
    merge_bond,
    move_label,
    predict_batch,
    predict_from_scores,
    right_environment,
    split_bond,
)
from .tensor_core import Tensor, contract, frobenius_norm, permute

T = TypeVar("T")


@dataclass(frozen=True)
class BondTensor:
    """Merged tensor of sites j and j+1 with layout (m_{j-1}, d, d, m_{j+1}, N_L)."""

    tensor: Tensor
    bond: int


@dataclass(frozen=True)
class SplitOutcome:
    """Result of one update-and-split step."""

    kept_rank: int
    discarded_weight: float
    step: float
    local_cost_before: float
    local_cost_after: float
    svd_shape: tuple[int, int]
    trials: int


# =============================================================================
# Costs and Metrics
# =============================================================================


def quadratic_cost(model: MpsClassifier, dataset: EncodedDataset) -> float:
    """Half the summed squared deviation of all scores from one-hot targets."""
    scores = evaluate_batch(model, dataset.vectors)
    return _cost_from_scores(scores, dataset.targets)


def _cost_from_scores(scores: Tensor, targets: NDArray[np.float64]) -> float:
    cost = 0.5 * float(np.sum(np.abs(scores - targets) ** 2))
    if not np.isfinite(cost):
        raise NumericalError("quadratic cost is not finite")
    return cost


def confusion_matrix(model: MpsClassifier, dataset: EncodedDataset) -> NDArray[np.int64]:
    """(N_L, N_L) counts; row is the true label, column the prediction."""
    predicted = predict_batch(model, dataset.vectors)
    matrix = np.zeros((dataset.n_labels, dataset.n_labels), dtype=np.int64)
    np.add.at(matrix, (dataset.labels, predicted), 1)
    return matrix


def error_rate(model: MpsClassifier, dataset: EncodedDataset) -> float:
    """Fraction of misclassified examples."""
    if dataset.n_examples == 0:
        return 0.0
    predicted = predict_batch(model, dataset.vectors)
    return float(np.mean(predicted != dataset.labels))


def evaluate_metrics(model: MpsClassifier, dataset: EncodedDataset) -> EvalMetrics:
    """Error rate, misclassified count and confusion matrix in one pass."""
    matrix = confusion_matrix(model, dataset)
    total = int(matrix.sum())
    wrong = total - int(np.trace(matrix))
    return EvalMetrics(
        error_rate=wrong / total if total else 0.0,
        misclassified_count=wrong,
        total=total,
        confusion_matrix=matrix.tolist(),
    )


# =============================================================================
# Environment Cache
# =============================================================================


class EnvironmentCache:
    """Per-example projections of the sites outside the active bond.

    `left[k]` is the contraction of sites 0 .. k-1 with their local vectors
    and `right[k]` the contraction of sites k .. N-1, each an (n, m) array.
    At bond j only `left[0..j]` and `right[j+2..N]` are valid; the rest are
    None.
    """

    def __init__(self, model: MpsClassifier, vectors: Tensor, bond: int) -> None:
        n_sites = model.n_sites
        if not 0 <= bond < n_sites - 1:
            raise CacheError(f"bond {bond} out of range for {n_sites} sites")
        if model.label_site not in (bond, bond + 1):
            raise CacheError(f"label on site {model.label_site} is outside bond {bond}")
        self.vectors = vectors
        self.bond = bond
        self.left: list[Tensor | None] = [None] * (n_sites + 1)
        self.right: list[Tensor | None] = [None] * (n_sites + 1)

        env = left_environment(model.sites, vectors, 0)
        self.left[0] = env
        for k in range(bond):
            env = contract_left(env, model.sites[k], vectors[:, k])
            self.left[k + 1] = env
        env = right_environment(model.sites, vectors, n_sites)
        self.right[n_sites] = env
        for k in range(n_sites - 1, bond + 1, -1):
            env = contract_right(model.sites[k], env, vectors[:, k])
            self.right[k] = env

    @property
    def n_sites(self) -> int:
        """Number of sites of the model the cache was built for."""
        return len(self.left) - 1

    def left_env(self) -> Tensor:
        """Projection of the sites left of the active bond."""
        env = self.left[self.bond]
        if env is None:
            raise CacheError(f"left environment missing at bond {self.bond}")
        return env

    def right_env(self) -> Tensor:
        """Projection of the sites right of the active bond."""
        env = self.right[self.bond + 2]
        if env is None:
            raise CacheError(f"right environment missing at bond {self.bond}")
        return env

    def advance(self, model: MpsClassifier, direction: SweepDirection) -> None:
        """Move the active bond one site, absorbing the site just split off.

        Raises:
            CacheError: At the boundary or when the absorbed site carries the
                label.
        """
        j = self.bond
        if direction == SweepDirection.RIGHT:
            if j + 1 > self.n_sites - 2:
                raise CacheError(f"cannot advance right past bond {j}")
            if model.label_site == j:
                raise CacheError(f"site {j} still carries the label")
            self.left[j + 1] = contract_left(self.left_env(), model.sites[j], self.vectors[:, j])
            self.right[j + 2] = None
            self.bond = j + 1
        else:
            if j == 0:
                raise CacheError("cannot advance left past bond 0")
            if model.label_site == j + 1:
                raise CacheError(f"site {j + 1} still carries the label")
            self.right[j + 1] = contract_right(
                model.sites[j + 1], self.right_env(), self.vectors[:, j + 1]
            )
            self.left[j] = None
            self.bond = j - 1
        log_event("cache_advance", level="debug", direction=direction.value, bond=self.bond)


def advance_cache(
    cache: EnvironmentCache, model: MpsClassifier, direction: SweepDirection
) -> EnvironmentCache:
    """Advance `cache` in place after a split and return it."""
    cache.advance(model, direction)
    return cache


# =============================================================================
# Chunked Bond Kernels
# =============================================================================


def _chunk_slices(n: int, chunk_size: int) -> list[slice]:
    return [slice(start, min(start + chunk_size, n)) for start in range(0, n, chunk_size)]


def _run_chunks(
    fn: Callable[[slice], T], slices: Sequence[slice], threads: int, ordered: bool = True
) -> list[T]:
    """Apply fn to every slice, on a thread pool when threads > 1.

    With `ordered`, results come back in slice order; otherwise in completion
    order.
    """
    if threads <= 1 or len(slices) <= 1:
        return [fn(sl) for sl in slices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        if ordered:
            return list(pool.map(fn, slices))
        futures = [pool.submit(fn, sl) for sl in slices]
        return [f.result() for f in as_completed(futures)]


def _design_rows(cache: EnvironmentCache, sl: slice) -> tuple[Tensor, Tensor]:
    """X = left (x) phi_j and Y = phi_{j+1} (x) right for a slice of examples."""
    j = cache.bond
    left = cache.left_env()[sl]
    right = cache.right_env()[sl]
    vec_j = cache.vectors[sl, j]
    vec_k = cache.vectors[sl, j + 1]
    x = (left[:, :, None] * vec_j[:, None, :]).reshape(left.shape[0], -1)
    y = (vec_k[:, :, None] * right[:, None, :]).reshape(left.shape[0], -1)
    return x, y


def _bond_matrix(bond: Tensor) -> Tensor:
    a, d1, d2, b, n_labels = bond.shape
    return bond.reshape(a * d1, d2 * b * n_labels)


def _scores_rows(bmat: Tensor, x: Tensor, y: Tensor, n_labels: int) -> Tensor:
    tmp = (x @ bmat).reshape(x.shape[0], y.shape[1], n_labels)
    out: Tensor = np.einsum("nql,nq->nl", tmp, y)
    return out


def _check_cache(bond: BondTensor, cache: EnvironmentCache) -> None:
    if cache.bond != bond.bond:
        raise CacheError(f"cache is at bond {cache.bond}, bond tensor at bond {bond.bond}")
    left, right = cache.left_env(), cache.right_env()
    a, _, _, b, _ = bond.tensor.shape
    if left.shape[1] != a or right.shape[1] != b:
        raise CacheError(
            f"cache environments ({left.shape[1]}, {right.shape[1]}) do not match "
            f"bond tensor extents ({a}, {b})"
        )


def local_scores(
    bond: BondTensor,
    left_env: Tensor,
    right_env: Tensor,
    vec_j: Tensor,
    vec_next: Tensor,
) -> Tensor:
    """Scores of one example from its environments and the two bond vectors.

    Args:
        bond: Bond tensor at bond j.
        left_env: (m_{j-1},) projection of sites 0 .. j-1.
        right_env: (m_{j+1},) projection of sites j+2 .. N-1.
        vec_j: phi(x_j).
        vec_next: phi(x_{j+1}).

    Returns:
        N_L-vector of scores.
    """
    out: Tensor = np.einsum(
        "a,s,t,b,astbl->l", left_env, vec_j, vec_next, right_env, bond.tensor, optimize=True
    )
    return out


def local_scores_batch(
    bond: BondTensor, cache: EnvironmentCache, config: TrainConfig | None = None
) -> Tensor:
    """Scores of every cached example through the bond tensor; (n, N_L)."""
    config = config or TrainConfig()
    _check_cache(bond, cache)
    bmat = _bond_matrix(bond.tensor)
    n_labels = bond.tensor.shape[4]

    def chunk(sl: slice) -> Tensor:
        x, y = _design_rows(cache, sl)
        return _scores_rows(bmat, x, y, n_labels)

    n = cache.vectors.shape[0]
    parts = _run_chunks(chunk, _chunk_slices(n, config.chunk_size), config.threads)
    if not parts:
        return np.zeros((0, n_labels), dtype=bond.tensor.dtype)
    return np.concatenate(parts, axis=0)


def local_cost(
    bond: BondTensor,
    cache: EnvironmentCache,
    dataset: EncodedDataset,
    config: TrainConfig | None = None,
) -> float:
    """Quadratic cost with the bond tensor in place of sites j and j+1."""
    return _cost_from_scores(local_scores_batch(bond, cache, config), dataset.targets)


def gradient(
    bond: BondTensor,
    dataset: EncodedDataset,
    cache: EnvironmentCache,
    config: TrainConfig | None = None,
) -> Tensor:
    """Descent direction sum_n (delta - f) conj(projected input) at the bond.

    The sum is not divided by the number of examples. Chunks are reduced in
    chunk order when `config.deterministic` is set.

    Raises:
        CacheError: If the cache is not at this bond.
    """
    config = config or TrainConfig()
    _check_cache(bond, cache)
    bmat = _bond_matrix(bond.tensor)
    n_labels = bond.tensor.shape[4]
    targets = dataset.targets

    def chunk(sl: slice) -> Tensor:
        x, y = _design_rows(cache, sl)
        residual = targets[sl] - _scores_rows(bmat, x, y, n_labels)
        weighted = (np.conj(y)[:, :, None] * residual[:, None, :]).reshape(x.shape[0], -1)
        part: Tensor = np.conj(x).T @ weighted
        return part

    parts = _run_chunks(
        chunk,
        _chunk_slices(dataset.n_examples, config.chunk_size),
        config.threads,
        ordered=config.deterministic,
    )
    total = np.zeros_like(bmat)
    for part in parts:
        total += part
    return total.reshape(bond.tensor.shape)


# =============================================================================
# Bond Update
# =============================================================================


def form_bond_tensor(model: MpsClassifier, j: int) -> BondTensor:
    """Merge sites j and j+1; the label must be on one of them.

    Raises:
        TensorError: If j is not a bond or the label is elsewhere.
    """
    return BondTensor(tensor=merge_bond(model, j), bond=j)


def _recombine(left: Tensor, right: Tensor, direction: SweepDirection) -> Tensor:
    if direction == SweepDirection.RIGHT:
        return contract(left, right, [(2, 0)])
    return permute(contract(left, right, [(2, 0)]), [0, 1, 3, 4, 2])


def _apply_split(
    model: MpsClassifier, j: int, left: Tensor, right: Tensor, direction: SweepDirection
) -> MpsClassifier:
    sites = list(model.sites)
    sites[j], sites[j + 1] = left, right
    label_site = j + 1 if direction == SweepDirection.RIGHT else j
    return MpsClassifier(sites, label_site=label_site, map_kind=model.map_kind)


def update_and_split(
    model: MpsClassifier,
    bond: BondTensor,
    delta: Tensor,
    config: TrainConfig,
    direction: SweepDirection,
    dataset: EncodedDataset,
    cache: EnvironmentCache,
) -> tuple[MpsClassifier, SplitOutcome]:
    """Step B along delta, split it by truncated SVD and move the label.

    The step is alpha (divided by N_T when `normalize_gradient` is set). With
    backtracking, the step is halved while the local cost of the truncated
    reconstruction exceeds the cost before the step; after `max_backtracks`
    halvings the step is abandoned and B is only re-split.

    Args:
        model: Model whose sites j and j+1 form `bond`.
        bond: Current bond tensor.
        delta: Gradient from `gradient`.
        config: Optimizer settings.
        direction: Where the label goes after the split.
        dataset: Training set (for backtracking).
        cache: Environments at this bond (for backtracking).

    Returns:
        (updated model, outcome of the step).
    """
    if delta.shape != bond.tensor.shape:
        raise TensorError(f"gradient shape {delta.shape} != bond shape {bond.tensor.shape}")
    j = bond.bond
    step = config.learning_rate
    if config.normalize_gradient and dataset.n_examples:
        step /= dataset.n_examples

    cost_before = local_cost(bond, cache, dataset, config)
    trials = 0
    while True:
        trials += 1
        candidate = bond.tensor + step * delta if step > 0.0 else bond.tensor
        left, right, res = split_bond(candidate, direction, config.trunc)
        recon = BondTensor(_recombine(left, right, direction), j)
        cost_after = local_cost(recon, cache, dataset, config)
        if not config.backtracking or step == 0.0 or cost_after <= cost_before:
            break
        if trials > config.max_backtracks:
            log_warning(f"backtracking exhausted at bond {j}; step abandoned")
            step = 0.0
        else:
            step *= 0.5

    rows = int(np.prod(res.u.shape[:-1]))
    cols = int(np.prod(res.v.shape[1:]))
    outcome = SplitOutcome(
        kept_rank=res.kept_rank,
        discarded_weight=res.discarded_weight,
        step=step,
        local_cost_before=cost_before,
        local_cost_after=cost_after,
        svd_shape=(rows, cols),
        trials=trials,
    )
    return _apply_split(model, j, left, right, direction), outcome


def bond_flops(
    n_examples: int,
    m_left: int,
    d: int,
    m_right: int,
    n_labels: int,
    svd_shape: tuple[int, int],
    trials: int = 1,
) -> int:
    """Analytic multiply-add count of one bond visit.

    Scores and the gradient each cost n * d^2 * m_left * m_right * N_L; every
    trial adds one SVD (rows * cols * min(rows, cols)) and one cost
    evaluation.
    """
    contraction = n_examples * d * d * m_left * m_right * n_labels
    rows, cols = svd_shape
    return 2 * contraction + trials * (rows * cols * min(rows, cols) + contraction)


# =============================================================================
# Sweeps
# =============================================================================


def _visit_bond(
    model: MpsClassifier,
    j: int,
    direction: SweepDirection,
    dataset: EncodedDataset,
    cache: EnvironmentCache,
    config: TrainConfig,
    sweep_index: int,
    records: list[BondRecord],
) -> MpsClassifier:
    for _ in range(config.steps_per_bond):
        bond = form_bond_tensor(model, j)
        delta = gradient(bond, dataset, cache, config)
        grad_norm = frobenius_norm(delta)
        model, outcome = update_and_split(model, bond, delta, config, direction, dataset, cache)
        a, d, _, b, n_labels = bond.tensor.shape
        record = BondRecord(
            sweep=sweep_index,
            bond=j,
            direction=direction,
            grad_norm=grad_norm,
            step=outcome.step,
            kept_rank=outcome.kept_rank,
            discarded_weight=outcome.discarded_weight,
            local_cost_before=outcome.local_cost_before,
            local_cost_after=outcome.local_cost_after,
            flops=bond_flops(
                dataset.n_examples, a, d, b, n_labels, outcome.svd_shape, outcome.trials
            ),
        )
        log_event(
            "bond",
            level="debug",
            sweep=sweep_index,
            bond=j,
            direction=direction.value,
            grad_norm=grad_norm,
            step=outcome.step,
            rank=outcome.kept_rank,
            discarded=outcome.discarded_weight,
            cost=outcome.local_cost_after,
        )
        if config.record_bonds:
            records.append(record)
    return model


def sweep(
    model: MpsClassifier,
    dataset: EncodedDataset,
    config: TrainConfig,
    sweep_index: int = 1,
) -> tuple[MpsClassifier, SweepReport]:
    """One left-to-right then right-to-left pass over every bond.

    The label is moved to site 0 first if it is elsewhere.

    Args:
        model: Model to train.
        dataset: Encoded training set.
        config: Optimizer settings.
        sweep_index: Number reported in the sweep record.

    Returns:
        (trained model, report with one sweep record).

    Raises:
        TensorError: If the model has fewer than two sites or does not match
            the data.
    """
    if model.n_sites < 2:
        raise TensorError("sweeping needs at least two sites")
    if model.label_site != 0:
        model = move_label(model, 0)
    start = time.perf_counter()
    n_bonds = model.n_sites - 1
    bonds: list[BondRecord] = []

    cache = EnvironmentCache(model, dataset.vectors, 0)
    for j in range(n_bonds):
        model = _visit_bond(
            model, j, SweepDirection.RIGHT, dataset, cache, config, sweep_index, bonds
        )
        if j < n_bonds - 1:
            cache.advance(model, SweepDirection.RIGHT)
    for j in range(n_bonds - 1, -1, -1):
        model = _visit_bond(
            model, j, SweepDirection.LEFT, dataset, cache, config, sweep_index, bonds
        )
        if j > 0:
            cache.advance(model, SweepDirection.LEFT)

    scores = evaluate_batch(model, dataset.vectors)
    record = SweepRecord(
        sweep=sweep_index,
        cost=_cost_from_scores(scores, dataset.targets),
        train_error=float(np.mean(predict_from_scores(scores) != dataset.labels))
        if dataset.n_examples
        else 0.0,
        bond_dims=model.bond_dims,
        seconds=time.perf_counter() - start,
    )
    log_event(
        "sweep",
        n=sweep_index,
        cost=record.cost,
        train_error=record.train_error,
        max_bond=max(record.bond_dims),
        seconds=record.seconds,
    )
    return model, SweepReport(sweeps=[record], bonds=bonds)


def gauge_fix(model: MpsClassifier) -> MpsClassifier:
    """Label on site 0 with every other site right-orthogonal."""
    return canonical_to_mps(canonicalize(model, 0))


def train(
    model: MpsClassifier,
    dataset: EncodedDataset,
    config: TrainConfig,
    on_sweep: Callable[[SweepRecord], Any] | None = None,
) -> tuple[MpsClassifier, SweepReport]:
    """Run `config.sweeps` sweeps from a gauge-fixed copy of `model`.

    Args:
        model: Initial model.
        dataset: Encoded training set.
        config: Optimizer settings.
        on_sweep: Called with each sweep record as it completes.

    Returns:
        (trained model, report over all sweeps).
    """
    log_event(
        "train_start",
        n_examples=dataset.n_examples,
        n_sites=model.n_sites,
        sweeps=config.sweeps,
        max_rank=config.trunc.max_rank,
        learning_rate=config.learning_rate,
    )
    model = gauge_fix(model)
    report = SweepReport()
    for index in range(1, config.sweeps + 1):
        model, partial = sweep(model, dataset, config, sweep_index=index)
        report.sweeps.extend(partial.sweeps)
        report.bonds.extend(partial.bonds)
        if on_sweep is not None:
            on_sweep(partial.sweeps[0])
    return model, report
