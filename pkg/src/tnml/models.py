"""Pydantic models for tnml.

This module contains the enums, parameter records and report models shared by
the numerical modules and the CLI, providing validation and JSON
serialization. Array-valued objects (tensors, MPS models, datasets) are plain
dataclasses in their own modules; everything here is small and serializable.
"""

import math
from enum import Enum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ScalarKind(str, Enum):
    """Scalar field of a tensor."""

    REAL = "real"
    COMPLEX = "complex"


class FeatureMapKind(str, Enum):
    """Families of local feature maps phi(x) on [0, 1]."""

    HALF_ANGLE = "half_angle"
    SPIN_COHERENT = "spin_coherent"
    FULL_ANGLE = "full_angle"
    PHASE_MODULATED = "phase_modulated"


class InitScheme(str, Enum):
    """MPS initialization schemes."""

    RANDOM = "random"
    RANDN_EYE = "randn_eye"


class SweepDirection(str, Enum):
    """Direction the active bond moves after a split."""

    LEFT = "left"
    RIGHT = "right"


class ToyTask(str, Enum):
    """Two-dimensional toy classification tasks."""

    GAUSSIANS = "gaussians"
    SPIRAL = "spiral"


class ToySolver(str, Enum):
    """How the full weight tensor of a toy classifier is fit."""

    GRADIENT = "gradient"
    EXACT = "exact"


# =============================================================================
# Optimization Parameters
# =============================================================================


class TruncParams(BaseModel):
    """Truncation rule applied to singular values after a bond split.

    Attributes:
        max_rank: Largest bond dimension kept.
        cutoff: Relative threshold; values with s_k / s_1 < cutoff are dropped.
        min_rank: Smallest bond dimension kept, even if the cutoff drops more.
    """

    model_config = ConfigDict(frozen=True)

    max_rank: int = Field(default=10, ge=1)
    cutoff: float = Field(default=1e-10, ge=0.0)
    min_rank: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_rank_order(self) -> "TruncParams":
        """Ensure min_rank does not exceed max_rank."""
        if self.min_rank > self.max_rank:
            raise ValueError(f"min_rank {self.min_rank} exceeds max_rank {self.max_rank}")
        return self


class TrainConfig(BaseModel):
    """Settings of the sweeping optimizer.

    Attributes:
        learning_rate: Step size alpha of B <- B + alpha * dB. The gradient is
            divided by the number of training examples when
            `normalize_gradient` is set, so alpha is O(0.1).
        sweeps: Number of full left-right-left passes.
        trunc: Truncation applied at every split.
        steps_per_bond: Gradient steps per bond visit.
        backtracking: Halve the step while the local cost would increase.
        max_backtracks: Halvings tried before the step is abandoned.
        normalize_gradient: Divide the gradient by the training set size.
        seed: Seed for anything random inside training.
        threads: Worker threads for per-example gradient terms.
        deterministic: Fixed chunk boundaries and reduction order.
        chunk_size: Examples per gradient chunk.
        bond_solver: Bond update method; only plain gradient steps exist.
        record_bonds: Keep a per-bond diagnostic record in the report.
    """

    model_config = ConfigDict(frozen=True)

    learning_rate: float = Field(default=0.1, ge=0.0)
    sweeps: int = Field(default=3, ge=1)
    trunc: TruncParams = Field(default_factory=TruncParams)
    steps_per_bond: int = Field(default=1, ge=1)
    backtracking: bool = True
    max_backtracks: int = Field(default=10, ge=0)
    normalize_gradient: bool = True
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    deterministic: bool = True
    chunk_size: int = Field(default=2048, ge=1)
    bond_solver: Literal["gradient"] = "gradient"
    record_bonds: bool = True


# =============================================================================
# Training Reports
# =============================================================================


class BondRecord(BaseModel):
    """Diagnostics of one bond visit.

    Attributes:
        sweep: Sweep number (1-based).
        bond: Bond index j (between sites j and j+1).
        direction: Direction the label moved after the split.
        grad_norm: Frobenius norm of the raw gradient.
        step: Accepted step size (0 when every backtracking trial failed).
        kept_rank: New bond dimension.
        discarded_weight: Sum of squared truncated singular values.
        local_cost_before: Quadratic cost before the step.
        local_cost_after: Quadratic cost after step and truncation.
        flops: Analytic multiply-add count of the visit.
    """

    sweep: int
    bond: int
    direction: SweepDirection
    grad_norm: float = Field(ge=0)
    step: float = Field(ge=0)
    kept_rank: int = Field(ge=1)
    discarded_weight: float = Field(ge=0)
    local_cost_before: float = Field(ge=0)
    local_cost_after: float = Field(ge=0)
    flops: int = Field(ge=0)


class SweepRecord(BaseModel):
    """Summary of one sweep, written as one JSON line.

    Attributes:
        sweep: Sweep number (1-based).
        cost: Quadratic cost after the sweep.
        train_error: Fraction of misclassified training examples.
        bond_dims: Bond dimension profile m_0 .. m_{N-2}.
        seconds: Wall time of the sweep.
    """

    sweep: int = Field(ge=1)
    cost: float = Field(ge=0)
    train_error: float = Field(ge=0, le=1)
    bond_dims: list[int]
    seconds: float = Field(ge=0)


class SweepReport(BaseModel):
    """All sweep records of a training run plus optional bond diagnostics."""

    sweeps: list[SweepRecord] = Field(default_factory=list)
    bonds: list[BondRecord] = Field(default_factory=list)

    @property
    def final(self) -> SweepRecord | None:
        """Record of the last sweep, if any."""
        return self.sweeps[-1] if self.sweeps else None


class EvalMetrics(BaseModel):
    """Classification metrics of a model on a labeled dataset.

    Attributes:
        error_rate: misclassified_count / total.
        misclassified_count: Number of wrong predictions.
        total: Number of examples.
        confusion_matrix: Row = true label, column = predicted label.
    """

    error_rate: float = Field(ge=0, le=1)
    misclassified_count: int = Field(ge=0)
    total: int = Field(ge=0)
    confusion_matrix: list[list[int]]


class ModelSummary(BaseModel):
    """Structure and bond spectra of a stored model."""

    n_sites: int
    d: int
    n_labels: int
    label_site: int
    map_kind: FeatureMapKind
    scalar_kind: ScalarKind
    bond_dims: list[int]
    norm: float
    singular_values: list[list[float]]


# =============================================================================
# Toy Data Parameters and Results
# =============================================================================


def _rotated_cov(var_major: float, var_minor: float, degrees: float) -> list[list[float]]:
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    cov = rot @ np.diag([var_major, var_minor]) @ rot.T
    return [[float(v) for v in row] for row in cov]


class GaussianPairParams(BaseModel):
    """Two Gaussian classes on the unit square.

    Class A (label 0) defaults to the lower right, class B (label 1) to the
    upper left.

    Attributes:
        mean_a: Mean of class A.
        mean_b: Mean of class B.
        cov_a: Covariance of class A (symmetric positive definite).
        cov_b: Covariance of class B (symmetric positive definite).
        n_per_class: Points drawn per class.
    """

    model_config = ConfigDict(frozen=True)

    mean_a: tuple[float, float] = (0.7, 0.3)
    mean_b: tuple[float, float] = (0.3, 0.7)
    cov_a: list[list[float]] = Field(default_factory=lambda: _rotated_cov(0.02, 0.04, 30.0))
    cov_b: list[list[float]] = Field(default_factory=lambda: _rotated_cov(0.05, 0.015, -20.0))
    n_per_class: int = Field(default=100, ge=1)

    @field_validator("cov_a", "cov_b")
    @classmethod
    def check_spd(cls, v: list[list[float]]) -> list[list[float]]:
        """Reject covariances that are not 2x2 symmetric positive definite."""
        arr = np.asarray(v, dtype=np.float64)
        if arr.shape != (2, 2):
            raise ValueError(f"covariance must be 2x2, got shape {arr.shape}")
        if not np.allclose(arr, arr.T, rtol=0.0, atol=1e-15):
            raise ValueError("covariance must be symmetric")
        try:
            np.linalg.cholesky(arr)
        except np.linalg.LinAlgError as e:
            raise ValueError("covariance must be positive definite") from e
        return v


class SpiralParams(BaseModel):
    """Geometry of the two-arm Archimedean spiral partition.

    Arms follow r = a + b * theta around `center`; arm 1 is arm 0 rotated by
    half a turn, and the bands between consecutive arms alternate labels.
    Along any ray the bands are b * pi wide.

    Attributes:
        a: Radius offset of the arms.
        b: Radial growth per radian.
        theta_max: Angular extent of the drawn arms.
        center: Spiral center.
        margin: Smallest distance between a sampled point and either arm.
    """

    model_config = ConfigDict(frozen=True)

    a: float = Field(default=0.05, ge=0.0)
    b: float = Field(default=0.3 / math.pi, gt=0.0)
    theta_max: float = Field(default=1.5 * math.pi, gt=0.0)
    center: tuple[float, float] = (0.5, 0.5)
    margin: float = Field(default=0.04, ge=0.0)

    @model_validator(mode="after")
    def check_margin(self) -> "SpiralParams":
        """Both labels need room between the arms."""
        if 2.0 * self.margin >= self.b * math.pi:
            raise ValueError(
                f"margin {self.margin} leaves no room in bands of width {self.b * math.pi:.4g}"
            )
        return self


class KlScanResult(BaseModel):
    """KL divergence of relearned generative models versus sample size.

    Attributes:
        sizes: Sample sizes N_s.
        mean_kl: Mean D_KL over trials per size.
        std_kl: Standard deviation of D_KL over trials per size.
        sigma: Least-squares fit of mean_kl ~ sigma / sqrt(N_s).
        residual: RMS residual of the fit.
        exponent: Decay exponent p of a log-log fit mean_kl ~ prefactor * N_s^(-p);
            None when a mean is not positive or there is a single size.
        prefactor: Prefactor of that fit.
        trials: Trials per size.
        grid: Quadrature resolution G.
    """

    sizes: list[int]
    mean_kl: list[float]
    std_kl: list[float]
    sigma: float
    residual: float = Field(ge=0)
    exponent: float | None = None
    prefactor: float | None = None
    trials: int = Field(ge=1)
    grid: int

    @field_validator("mean_kl")
    @classmethod
    def check_nonnegative(cls, v: list[float]) -> list[float]:
        """KL divergences are nonnegative up to quadrature noise."""
        if any(x < -1e-10 for x in v):
            raise ValueError("KL divergence must be nonnegative")
        return v


class ToyMetrics(BaseModel):
    """Outcome of a toy classification run."""

    task: ToyTask
    d: int
    n_points: int
    solver: ToySolver = ToySolver.GRADIENT
    train_accuracy: float = Field(ge=0, le=1)
    final_cost: float = Field(ge=0)
    grid: int
    boundary_cells: int = Field(ge=0)
    disagreement_area: float | None = None
