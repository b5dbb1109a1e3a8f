"""Local feature maps and the product-state encoding of inputs.

A local map sends one input component x in [0, 1] to a unit d-vector phi(x).
An input vector of N components is encoded as the tensor product of N such
vectors; that product is never materialized, it is stored as an (N, d) array
of local vectors (`EncodedInput`) or an (n, N, d) array for batches.
"""

from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.polynomial.legendre import leggauss
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import comb

from .exceptions import FeatureMapError
from .models import FeatureMapKind, ScalarKind

# Phase winding of the complex map: exp(+-i * PHASE_RATE * x)
PHASE_RATE = 1.5 * np.pi

MIN_QUADRATURE_NODES = 16

_TWO_COMPONENT = {
    FeatureMapKind.HALF_ANGLE,
    FeatureMapKind.FULL_ANGLE,
    FeatureMapKind.PHASE_MODULATED,
}
_ORTHONORMAL = {FeatureMapKind.FULL_ANGLE, FeatureMapKind.PHASE_MODULATED}


def _check_kind_dimension(kind: Any, d: Any) -> None:
    try:
        kind = FeatureMapKind(kind)
    except ValueError:
        return  # field validation reports unknown kinds
    if kind in _TWO_COMPONENT and isinstance(d, int) and d != 2:
        raise FeatureMapError(f"{kind.value} map requires d = 2, got d = {d}")


class LocalFeatureMap(BaseModel):
    """A local feature map phi: [0, 1] -> unit vectors of dimension d.

    Constructing a two-component kind with d != 2 raises `FeatureMapError`.
    `model_validate` applies the same rule but reports it as a pydantic
    `ValidationError`.

    Attributes:
        kind: Map family.
        d: Local dimension (2 for every kind except spin_coherent).
    """

    model_config = ConfigDict(frozen=True)

    kind: FeatureMapKind = FeatureMapKind.HALF_ANGLE
    d: int = Field(default=2, ge=2)

    def __init__(self, **data: Any) -> None:
        _check_kind_dimension(data.get("kind", FeatureMapKind.HALF_ANGLE), data.get("d", 2))
        super().__init__(**data)

    @model_validator(mode="after")
    def check_dimension(self) -> "LocalFeatureMap":
        """Only spin_coherent supports d > 2."""
        _check_kind_dimension(self.kind, self.d)
        return self

    @property
    def scalar_kind(self) -> ScalarKind:
        """Scalar field of the produced vectors."""
        if self.kind == FeatureMapKind.PHASE_MODULATED:
            return ScalarKind.COMPLEX
        return ScalarKind.REAL

    @property
    def measure_weight(self) -> float:
        """Density of the measure d(mu) = weight * dx under which the map is checked."""
        return 2.0 if self.kind in _ORTHONORMAL else 1.0

    @property
    def is_orthonormal(self) -> bool:
        """Whether the components are orthonormal functions under the measure."""
        return self.kind in _ORTHONORMAL


@dataclass(frozen=True)
class EncodedInput:
    """One input in factored product form.

    Attributes:
        vectors: (N, d) array; row j is phi(x_j).
        label: Known label, if any.
    """

    vectors: NDArray[Any]
    label: int | None = None

    @property
    def n_sites(self) -> int:
        """Number of input components N."""
        return int(self.vectors.shape[0])

    @property
    def d(self) -> int:
        """Local dimension."""
        return int(self.vectors.shape[1])


def _check_unit_interval(xs: NDArray[np.float64]) -> None:
    if not np.all(np.isfinite(xs)):
        raise FeatureMapError("feature map input contains non-finite values")
    if xs.size and (xs.min() < 0.0 or xs.max() > 1.0):
        raise FeatureMapError(
            f"feature map input must lie in [0, 1], got range [{xs.min()}, {xs.max()}]"
        )


def map_values(fmap: LocalFeatureMap, xs: ArrayLike) -> NDArray[Any]:
    """Apply a local map elementwise.

    Args:
        fmap: The local map.
        xs: Array of inputs in [0, 1].

    Returns:
        Array of shape xs.shape + (d,), float64 or complex128.

    Raises:
        FeatureMapError: If any input is outside [0, 1] or not finite.
    """
    x = np.asarray(xs, dtype=np.float64)
    _check_unit_interval(x)

    if fmap.kind == FeatureMapKind.HALF_ANGLE:
        theta = 0.5 * np.pi * x
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    if fmap.kind == FeatureMapKind.FULL_ANGLE:
        theta = np.pi * x
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    if fmap.kind == FeatureMapKind.PHASE_MODULATED:
        theta = 0.5 * np.pi * x
        phase = np.exp(1j * PHASE_RATE * x)
        return np.stack([phase * np.cos(theta), np.conj(phase) * np.sin(theta)], axis=-1)

    # spin_coherent: binomial expansion of (cos, sin) to d components
    theta = 0.5 * np.pi * x
    c = np.cos(theta)[..., None]
    s = np.sin(theta)[..., None]
    powers = np.arange(fmap.d)
    coeff = np.sqrt(comb(fmap.d - 1, powers))
    return coeff * c ** (fmap.d - 1 - powers) * s**powers


def map_local(fmap: LocalFeatureMap, x: float) -> NDArray[Any]:
    """Map a single component x in [0, 1] to its unit d-vector.

    Example:
        >>> map_local(LocalFeatureMap(), 0.0)
        array([1., 0.])
    """
    return map_values(fmap, np.float64(x))


def encode(x_vec: ArrayLike, fmap: LocalFeatureMap, label: int | None = None) -> EncodedInput:
    """Encode an input vector as N local vectors.

    Args:
        x_vec: N components in [0, 1].
        fmap: Local map applied to each component.
        label: Optional known label to carry along.

    Returns:
        EncodedInput with an (N, d) vector array.
    """
    x = np.asarray(x_vec, dtype=np.float64)
    if x.ndim != 1:
        raise FeatureMapError(f"expected a 1-D input vector, got shape {x.shape}")
    return EncodedInput(vectors=map_values(fmap, x), label=label)


def encode_batch(inputs: ArrayLike, fmap: LocalFeatureMap) -> NDArray[Any]:
    """Encode an (n, N) array of inputs as an (n, N, d) array of local vectors."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise FeatureMapError(f"expected an (n, N) input array, got shape {x.shape}")
    return map_values(fmap, x)


def gram_quadrature(fmap: LocalFeatureMap, n_nodes: int = 64) -> NDArray[Any]:
    """Gram matrix of the map components under its measure on [0, 1].

    Entry (s, t) is the integral of conj(phi^s(x)) phi^t(x) times the measure
    weight, computed with Gauss-Legendre quadrature mapped from [-1, 1].

    Args:
        fmap: The local map.
        n_nodes: Number of quadrature nodes (at least 16).

    Returns:
        d x d Gram matrix; the identity for orthonormal maps.

    Raises:
        FeatureMapError: If n_nodes is below 16.
    """
    if n_nodes < MIN_QUADRATURE_NODES:
        raise FeatureMapError(f"n_nodes must be >= {MIN_QUADRATURE_NODES}, got {n_nodes}")
    nodes, weights = leggauss(n_nodes)
    x = np.clip(0.5 * (nodes + 1.0), 0.0, 1.0)
    w = 0.5 * weights * fmap.measure_weight
    phi = map_values(fmap, x)
    gram: NDArray[Any] = np.einsum("n,ns,nt->st", w, np.conj(phi), phi)
    return gram
