"""Dataset ingestion and synthesis.

MNIST images are read from standard IDX files (raw or gzip), averaged down
from 28x28 to 14x14, scaled to [0, 1] and flattened in snake order so that
pixels adjacent in the chain are adjacent in the image. The two-dimensional
toy tasks (a pair of Gaussian classes and a two-arm spiral) are sampled on
the unit square.
"""

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree
from scipy.stats import multivariate_normal

from .exceptions import DataFormatError, TensorError
from .feature_maps import LocalFeatureMap, encode_batch
from .logging_config import log_debug, log_event, log_info
from .models import GaussianPairParams, SpiralParams
from .outputs import write_csv
from .tensor_core import Tensor

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049
MNIST_SIDE = 28
MNIST_LABELS = 10

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

# Rejection sampling gives up after this many batches
MAX_SAMPLING_ROUNDS = 10_000

# Spacing of the sampled spiral arms used for boundary distances
SPIRAL_ARC_STEP = 1e-3


@dataclass(frozen=True)
class RawImage:
    """A grayscale image with 8-bit pixels."""

    height: int
    width: int
    pixels: NDArray[np.uint8]

    def __post_init__(self) -> None:
        if self.pixels.shape != (self.height, self.width):
            raise DataFormatError(
                f"pixel grid of shape {self.pixels.shape} does not match "
                f"{self.height}x{self.width}"
            )


@dataclass(frozen=True)
class EncodedDataset:
    """Encoded training or test examples.

    Attributes:
        vectors: (n, N, d) local feature vectors.
        labels: (n,) integer labels in [0, n_labels).
        n_labels: Number of labels N_L.
    """

    vectors: Tensor
    labels: NDArray[np.int64]
    n_labels: int

    def __post_init__(self) -> None:
        if self.vectors.ndim != 3:
            raise TensorError(f"vectors must be (n, N, d), got shape {self.vectors.shape}")
        if self.labels.shape != (self.vectors.shape[0],):
            raise TensorError(
                f"{self.labels.shape[0]} labels for {self.vectors.shape[0]} examples"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_labels):
            raise TensorError(f"labels must lie in [0, {self.n_labels})")

    @classmethod
    def from_inputs(
        cls, inputs: ArrayLike, labels: ArrayLike, fmap: LocalFeatureMap, n_labels: int
    ) -> "EncodedDataset":
        """Encode an (n, N) array of inputs in [0, 1]."""
        return cls(
            vectors=encode_batch(inputs, fmap),
            labels=np.asarray(labels, dtype=np.int64),
            n_labels=n_labels,
        )

    @property
    def n_examples(self) -> int:
        """Number of examples N_T."""
        return int(self.vectors.shape[0])

    @property
    def targets(self) -> NDArray[np.float64]:
        """One-hot targets delta(l, L_n) as an (n, N_L) array."""
        out = np.zeros((self.n_examples, self.n_labels))
        out[np.arange(self.n_examples), self.labels] = 1.0
        return out


@dataclass(frozen=True)
class LabeledDataset:
    """Inputs in [0, 1]^N with integer labels.

    Attributes:
        inputs: (n, N) array of input vectors.
        labels: (n,) labels in [0, n_labels).
        n_labels: Number of labels.
        ordering: Permutation applied to the flattened features, if any.
        provenance: Free-form description of where the data came from.
    """

    inputs: NDArray[np.float64]
    labels: NDArray[np.int64]
    n_labels: int
    ordering: NDArray[np.int64] | None = None
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2:
            raise DataFormatError(f"inputs must be (n, N), got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise DataFormatError(
                f"{self.labels.shape[0]} labels for {self.inputs.shape[0]} inputs"
            )
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise DataFormatError("inputs must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_labels):
            raise DataFormatError(f"labels must lie in [0, {self.n_labels})")

    @property
    def n_examples(self) -> int:
        """Number of examples."""
        return int(self.inputs.shape[0])

    @property
    def n_features(self) -> int:
        """Length N of each input vector."""
        return int(self.inputs.shape[1])

    def encode(self, fmap: LocalFeatureMap) -> EncodedDataset:
        """Encode every input with a local feature map."""
        return EncodedDataset.from_inputs(self.inputs, self.labels, fmap, self.n_labels)


# =============================================================================
# IDX Files
# =============================================================================


def parse_idx(payload: bytes) -> NDArray[np.uint8]:
    """Parse an IDX image or label stream.

    Args:
        payload: Complete file contents (big-endian header).

    Returns:
        (count, rows, cols) uint8 images for magic 2051, or (count,) uint8
        labels for magic 2049.

    Raises:
        DataFormatError: On unknown magic, truncation or trailing bytes.
    """
    if len(payload) < 8:
        raise DataFormatError(f"IDX stream too short ({len(payload)} bytes)")
    magic, count = struct.unpack_from(">II", payload)
    if magic == IMAGES_MAGIC:
        if len(payload) < 16:
            raise DataFormatError("IDX image header truncated")
        rows, cols = struct.unpack_from(">II", payload, 8)
        header, shape = 16, (count, rows, cols)
    elif magic == LABELS_MAGIC:
        header, shape = 8, (count,)
    else:
        raise DataFormatError(f"unknown IDX magic {magic}")

    expected = header + math.prod(shape)
    if len(payload) < expected:
        raise DataFormatError(
            f"IDX stream truncated: {len(payload)} bytes, expected {expected}"
        )
    if len(payload) > expected:
        raise DataFormatError(
            f"IDX length mismatch: {len(payload)} bytes, expected {expected}"
        )
    data = np.frombuffer(payload, dtype=np.uint8, offset=header)
    return data.reshape(shape).copy()


def images_from_idx(array: NDArray[np.uint8]) -> list[RawImage]:
    """Wrap a (count, rows, cols) IDX image array as RawImage values."""
    if array.ndim != 3:
        raise DataFormatError(f"expected an image array, got shape {array.shape}")
    return [RawImage(array.shape[1], array.shape[2], img) for img in array]


def read_idx_file(path: Path) -> NDArray[np.uint8]:
    """Read and parse an IDX file, gunzipping when the name ends in .gz."""
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as handle:
            payload = handle.read()
    else:
        payload = path.read_bytes()
    return parse_idx(payload)


def find_idx_file(data_dir: Path, stem: str) -> Path:
    """Locate `stem` or `stem.gz` in `data_dir`.

    Raises:
        FileNotFoundError: If neither exists.
    """
    for candidate in (data_dir / stem, data_dir / f"{stem}.gz"):
        if candidate.is_file():
            log_debug(f"Using {candidate}")
            return candidate
    raise FileNotFoundError(f"{stem}[.gz] not found in {data_dir}")


# =============================================================================
# Image Preprocessing
# =============================================================================


def downsample_batch(images: NDArray[np.uint8]) -> NDArray[np.float64]:
    """Average 2x2 blocks of (n, 28, 28) images and scale to [0, 1]; (n, 14, 14)."""
    if images.ndim != 3 or images.shape[1:] != (MNIST_SIDE, MNIST_SIDE):
        raise DataFormatError(f"expected (n, 28, 28) images, got shape {images.shape}")
    half = MNIST_SIDE // 2
    blocks = images.astype(np.float64).reshape(-1, half, 2, half, 2)
    return blocks.mean(axis=(2, 4)) / 255.0


def downsample(img: RawImage) -> NDArray[np.float64]:
    """Average 2x2 blocks of a 28x28 image and scale to [0, 1].

    Raises:
        DataFormatError: If the image is not 28x28.
    """
    if (img.height, img.width) != (MNIST_SIDE, MNIST_SIDE):
        raise DataFormatError(f"expected a 28x28 image, got {img.height}x{img.width}")
    return downsample_batch(img.pixels[None, ...])[0]


def snake_order(height: int, width: int) -> NDArray[np.int64]:
    """Boustrophedon visiting order of a grid.

    Even rows run left to right, odd rows right to left. Entry k is the
    row-major index of the k-th visited pixel.

    Example:
        >>> snake_order(2, 2)
        array([0, 1, 3, 2])
    """
    if height < 1 or width < 1:
        raise DataFormatError(f"grid extents must be positive, got {height}x{width}")
    grid = np.arange(height * width, dtype=np.int64).reshape(height, width)
    grid[1::2] = grid[1::2, ::-1]
    return grid.ravel()


def stratified_subset(labels: NDArray[np.int64], size: int, seed: int) -> NDArray[np.int64]:
    """Indices of a label-stratified uniform subset without replacement.

    Each label receives a share proportional to its frequency; leftover slots
    go to the labels with the largest fractional shares.

    Args:
        labels: Labels of the full set.
        size: Number of examples wanted (1 .. len(labels)).
        seed: Random seed.

    Returns:
        Sorted indices into `labels`.

    Raises:
        DataFormatError: If size is out of range.
    """
    n = labels.shape[0]
    if not 1 <= size <= n:
        raise DataFormatError(f"subset size must be in [1, {n}], got {size}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    shares = size * counts / n
    take = np.floor(shares).astype(np.int64)
    leftover = size - int(take.sum())
    # Stable sort keeps the lower label first among equal fractions
    order = np.argsort(-(shares - take), kind="stable")
    take[order[:leftover]] += 1

    chosen = [
        rng.permutation(np.flatnonzero(labels == cls))[:k]
        for cls, k in zip(classes, take, strict=True)
    ]
    return np.sort(np.concatenate(chosen))


def build_mnist(
    data_dir: Path,
    split: str = "train",
    subset: int | None = None,
    seed: int = 0,
    ordering: ArrayLike | None = None,
    downsample_images: bool = True,
) -> LabeledDataset:
    """Load an MNIST split as a labeled dataset.

    Args:
        data_dir: Directory holding the IDX files (raw or .gz).
        split: "train" or "test".
        subset: Optional stratified subset size.
        seed: Seed for the subset.
        ordering: Feature permutation; defaults to snake order.
        downsample_images: Average down to 14x14 (28x28 otherwise).

    Returns:
        LabeledDataset with N = 196 (or 784) features in [0, 1].

    Raises:
        FileNotFoundError: If the files are missing.
        DataFormatError: On malformed files or a bad subset size.
    """
    if split not in MNIST_FILES:
        raise DataFormatError(f"unknown MNIST split {split!r}")
    image_stem, label_stem = MNIST_FILES[split]
    images = read_idx_file(find_idx_file(data_dir, image_stem))
    labels = read_idx_file(find_idx_file(data_dir, label_stem)).astype(np.int64)
    if images.ndim != 3 or labels.ndim != 1:
        raise DataFormatError("MNIST image/label files swapped or malformed")
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")

    if subset is not None:
        keep = stratified_subset(labels, subset, seed)
        images, labels = images[keep], labels[keep]

    if downsample_images:
        grid = downsample_batch(images)
    else:
        grid = images.astype(np.float64) / 255.0
    height, width = grid.shape[1:]
    perm = (
        snake_order(height, width)
        if ordering is None
        else np.asarray(ordering, dtype=np.int64)
    )
    if not np.array_equal(np.sort(perm), np.arange(height * width)):
        raise DataFormatError("ordering is not a permutation of the pixel indices")
    inputs = grid.reshape(grid.shape[0], -1)[:, perm]

    log_info(f"Loaded MNIST {split}: {inputs.shape[0]} images of {inputs.shape[1]} pixels")
    return LabeledDataset(
        inputs=np.ascontiguousarray(inputs),
        labels=labels,
        n_labels=MNIST_LABELS,
        ordering=perm,
        provenance={
            "source": str(data_dir),
            "split": split,
            "subset": subset,
            "seed": seed,
            "downsampled": downsample_images,
        },
    )


def write_dataset_csv(dataset: LabeledDataset, path: Path) -> None:
    """Write one row per example: label, x1 .. xN."""
    header = ["label", *(f"x{k + 1}" for k in range(dataset.n_features))]
    rows = (
        [int(label), *(float(v) for v in row)]
        for label, row in zip(dataset.labels, dataset.inputs, strict=True)
    )
    write_csv(path, header, rows)


# =============================================================================
# Two-Dimensional Toy Data
# =============================================================================


def grid_centers(resolution: int) -> NDArray[np.float64]:
    """Cell midpoints (i + 1/2) / G for i = 0 .. G-1."""
    return (np.arange(resolution) + 0.5) / resolution


def grid_points(resolution: int) -> NDArray[np.float64]:
    """(G, G, 2) cell midpoints; entry [i1, i2] is (x1, x2)."""
    centers = grid_centers(resolution)
    x1, x2 = np.meshgrid(centers, centers, indexing="ij")
    return np.stack([x1, x2], axis=-1)


def gaussian_density(
    points: ArrayLike, mean: ArrayLike, cov: ArrayLike
) -> NDArray[np.float64]:
    """Bivariate normal density at an (..., 2) array of points."""
    pts = np.asarray(points, dtype=np.float64)
    density = multivariate_normal(mean=np.asarray(mean), cov=np.asarray(cov)).pdf(
        pts.reshape(-1, 2)
    )
    return np.asarray(density, dtype=np.float64).reshape(pts.shape[:-1])


def _inside_unit_square(points: NDArray[np.float64]) -> NDArray[np.bool_]:
    return np.all((points >= 0.0) & (points <= 1.0), axis=-1)


def _sample_class(
    rng: np.random.Generator,
    mean: tuple[float, float],
    cov: list[list[float]],
    n: int,
) -> NDArray[np.float64]:
    chol = np.linalg.cholesky(np.asarray(cov))
    kept: list[NDArray[np.float64]] = []
    total = 0
    for _ in range(MAX_SAMPLING_ROUNDS):
        draws = np.asarray(mean) + rng.standard_normal((n, 2)) @ chol.T
        inside = draws[_inside_unit_square(draws)]
        kept.append(inside)
        total += inside.shape[0]
        if total >= n:
            return np.concatenate(kept)[:n]
    raise DataFormatError(f"could not draw {n} points inside the unit square from mean {mean}")


def sample_gaussian_pair(params: GaussianPairParams, seed: int) -> LabeledDataset:
    """Draw n_per_class points of each Gaussian class inside [0, 1]^2.

    Points falling outside the square are redrawn. Class A (label 0) comes
    first, then class B (label 1).
    """
    rng = np.random.default_rng(seed)
    a = _sample_class(rng, params.mean_a, params.cov_a, params.n_per_class)
    b = _sample_class(rng, params.mean_b, params.cov_b, params.n_per_class)
    labels = np.repeat(np.arange(2, dtype=np.int64), params.n_per_class)
    log_event("sample_gaussians", level="debug", n_per_class=params.n_per_class, seed=seed)
    return LabeledDataset(
        inputs=np.concatenate([a, b]),
        labels=labels,
        n_labels=2,
        provenance={"source": "gaussian_pair", "seed": seed},
    )


def bayes_boundary(params: GaussianPairParams, resolution: int) -> NDArray[np.int64]:
    """(G, G) label grid of the more likely class at each cell midpoint.

    Equal priors; ties go to class A (label 0).
    """
    pts = grid_points(resolution)
    density_a = gaussian_density(pts, params.mean_a, params.cov_a)
    density_b = gaussian_density(pts, params.mean_b, params.cov_b)
    return np.where(density_a >= density_b, 0, 1).astype(np.int64)


def spiral_label(
    x1: ArrayLike, x2: ArrayLike, params: SpiralParams | None = None
) -> NDArray[np.int64]:
    """Label of points in the two-arm spiral partition of the square.

    With polar coordinates (r, phi) around the center, a point lies between
    arm k and arm k+1 where k = floor(((r - a) / b - phi) / pi); even bands
    are label 0 and odd bands label 1.
    """
    params = params or SpiralParams()
    dx = np.asarray(x1, dtype=np.float64) - params.center[0]
    dy = np.asarray(x2, dtype=np.float64) - params.center[1]
    r = np.hypot(dx, dy)
    phi = np.mod(np.arctan2(dy, dx), 2.0 * np.pi)
    band = np.floor(((r - params.a) / params.b - phi) / np.pi)
    return np.mod(band, 2).astype(np.int64)


def spiral_arms(params: SpiralParams | None = None, n_points: int = 400) -> NDArray[np.float64]:
    """(2, n_points, 2) coordinates of both arms for theta in [0, theta_max]."""
    params = params or SpiralParams()
    theta = np.linspace(0.0, params.theta_max, n_points)
    r = params.a + params.b * theta
    arms = []
    for offset in (0.0, np.pi):
        arms.append(
            np.stack(
                [
                    params.center[0] + r * np.cos(theta + offset),
                    params.center[1] + r * np.sin(theta + offset),
                ],
                axis=-1,
            )
        )
    return np.stack(arms)


def spiral_boundary_distance(
    x1: ArrayLike, x2: ArrayLike, params: SpiralParams | None = None
) -> NDArray[np.float64]:
    """Euclidean distance from each point to the nearest label boundary.

    The boundaries are both arms continued from the center (r = 0) out past
    the corners of the square. The arms are sampled densely and searched with
    a k-d tree, so distances are exact to about `SPIRAL_ARC_STEP`.
    """
    params = params or SpiralParams()
    # farthest corner from the center, plus slack so corner points see the next arm
    reach = math.hypot(
        max(params.center[0], 1.0 - params.center[0]),
        max(params.center[1], 1.0 - params.center[1]),
    ) + params.b * math.pi
    theta_lo = -params.a / params.b
    theta_hi = (reach - params.a) / params.b
    n_points = max(int(math.ceil((theta_hi - theta_lo) * reach / SPIRAL_ARC_STEP)), 2)
    theta = np.linspace(theta_lo, theta_hi, n_points)
    r = params.a + params.b * theta
    curve = np.concatenate(
        [
            np.stack(
                [
                    params.center[0] + r * np.cos(theta + offset),
                    params.center[1] + r * np.sin(theta + offset),
                ],
                axis=-1,
            )
            for offset in (0.0, np.pi)
        ]
    )
    pts = np.stack(
        np.broadcast_arrays(np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64)),
        axis=-1,
    )
    distance, _ = cKDTree(curve).query(pts.reshape(-1, 2))
    out: NDArray[np.float64] = np.asarray(distance, dtype=np.float64).reshape(pts.shape[:-1])
    return out


def spiral_dataset(
    n_per_class: int, seed: int, params: SpiralParams | None = None
) -> LabeledDataset:
    """Uniform points of each spiral region, n_per_class per label.

    Points are drawn uniformly on the square; those closer than
    `params.margin` to an arm are discarded and the rest kept in draw order
    until both labels are filled. Label 0 points come first.
    """
    if n_per_class < 1:
        raise DataFormatError(f"n_per_class must be >= 1, got {n_per_class}")
    params = params or SpiralParams()
    rng = np.random.default_rng(seed)
    buckets: list[list[NDArray[np.float64]]] = [[], []]
    filled = [0, 0]
    for _ in range(MAX_SAMPLING_ROUNDS):
        draws = rng.uniform(0.0, 1.0, size=(2 * n_per_class, 2))
        if params.margin > 0.0:
            clear = spiral_boundary_distance(draws[:, 0], draws[:, 1], params)
            draws = draws[clear >= params.margin]
        labels = spiral_label(draws[:, 0], draws[:, 1], params)
        for label in (0, 1):
            chosen = draws[labels == label][: n_per_class - filled[label]]
            buckets[label].append(chosen)
            filled[label] += chosen.shape[0]
        if min(filled) >= n_per_class:
            break
    else:
        raise DataFormatError("spiral sampling did not fill both regions")

    inputs = np.concatenate([np.concatenate(b) for b in buckets])
    return LabeledDataset(
        inputs=inputs,
        labels=np.repeat(np.arange(2, dtype=np.int64), n_per_class),
        n_labels=2,
        provenance={"source": "spiral", "seed": seed},
    )
