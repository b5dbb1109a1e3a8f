"""Matrix product state classifiers.

The weight tensor W^l of a one-versus-all classifier is stored as a chain of N
site tensors. Every site has layout (m_left, d, m_right); boundary sites carry
dummy bonds of extent 1. Exactly one site (the label site) has a fourth index
of extent N_L holding the label.

Scores f^l(x) = W^l . Phi(x) are computed by transfer contraction from both
ends towards the label site, so no object of size d^N is ever built (except in
`to_full_tensor`, which exists as a small-N oracle).
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .exceptions import ModelFormatError, TensorError
from .feature_maps import EncodedInput
from .models import FeatureMapKind, InitScheme, ScalarKind, SweepDirection, TruncParams
from .outputs import atomic_write_bytes
from .tensor_core import SvdResult, Tensor, contract, permute, scalar_kind_of, svd

MAGIC = b"MPSC"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIBIIIIB")
EXTENTS = struct.Struct("<II")

# Largest d^N * N_L that to_full_tensor will materialize
FULL_TENSOR_LIMIT = 2**24

MAP_CODES = {
    FeatureMapKind.HALF_ANGLE: 0,
    FeatureMapKind.SPIN_COHERENT: 1,
    FeatureMapKind.FULL_ANGLE: 2,
    FeatureMapKind.PHASE_MODULATED: 3,
}
SCALAR_CODES = {ScalarKind.REAL: 0, ScalarKind.COMPLEX: 1}
_PAYLOAD_DTYPES = {ScalarKind.REAL: np.dtype("<f8"), ScalarKind.COMPLEX: np.dtype("<c16")}


@dataclass
class MpsClassifier:
    """An MPS-parameterized multi-label weight tensor.

    Attributes:
        sites: N site tensors; site j has shape (m_{j-1}, d, m_j) or, for the
            label site, (m_{j-1}, d, m_j, N_L).
        label_site: Index of the site carrying the label index.
        map_kind: Feature map the model was trained with.
    """

    sites: list[Tensor]
    label_site: int
    map_kind: FeatureMapKind = FeatureMapKind.HALF_ANGLE

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Check the structural invariants of the chain.

        Raises:
            TensorError: On any inconsistency.
        """
        n = len(self.sites)
        if n < 1:
            raise TensorError("an MPS needs at least one site")
        if not 0 <= self.label_site < n:
            raise TensorError(f"label_site {self.label_site} out of range for {n} sites")
        kind = scalar_kind_of(self.sites[0])
        d = self.sites[0].shape[1]
        for j, site in enumerate(self.sites):
            expected = 4 if j == self.label_site else 3
            if site.ndim != expected:
                raise TensorError(f"site {j} has order {site.ndim}, expected {expected}")
            if scalar_kind_of(site) != kind:
                raise TensorError(f"site {j} scalar kind differs from site 0")
            if site.shape[1] != d:
                raise TensorError(f"site {j} has local dimension {site.shape[1]}, expected {d}")
            if j > 0 and self.sites[j - 1].shape[2] != site.shape[0]:
                raise TensorError(
                    f"bond {j - 1} mismatch: {self.sites[j - 1].shape[2]} != {site.shape[0]}"
                )
            if not np.all(np.isfinite(site)):
                raise TensorError(f"site {j} contains non-finite values")
        if self.sites[0].shape[0] != 1 or self.sites[-1].shape[2] != 1:
            raise TensorError("boundary bonds must have extent 1")

    @property
    def n_sites(self) -> int:
        """Number of sites N."""
        return len(self.sites)

    @property
    def d(self) -> int:
        """Local dimension."""
        return int(self.sites[0].shape[1])

    @property
    def n_labels(self) -> int:
        """Number of labels N_L."""
        return int(self.sites[self.label_site].shape[3])

    @property
    def scalar_kind(self) -> ScalarKind:
        """Scalar field of the site tensors."""
        return scalar_kind_of(self.sites[0])

    @property
    def bond_dims(self) -> list[int]:
        """Bond dimensions m_0 .. m_{N-2}."""
        return [int(site.shape[2]) for site in self.sites[:-1]]

    def copy(self) -> "MpsClassifier":
        """Deep copy."""
        return MpsClassifier([s.copy() for s in self.sites], self.label_site, self.map_kind)


@dataclass
class CanonicalMps:
    """Mixed-canonical form with a bond core.

    Sites left of `core_site` are left-orthogonal, sites from `core_site` on
    are right-orthogonal, and the core sits on the left bond of `core_site`.

    Attributes:
        sites: N site tensors of layout (m_left, d, m_right); none has a label.
        core: Core tensor of shape (m_left, m_right, N_L).
        core_site: Site whose left bond holds the core.
        map_kind: Feature map of the model.
    """

    sites: list[Tensor]
    core: Tensor
    core_site: int
    map_kind: FeatureMapKind = FeatureMapKind.HALF_ANGLE

    @property
    def n_sites(self) -> int:
        """Number of sites N."""
        return len(self.sites)

    @property
    def n_labels(self) -> int:
        """Number of labels N_L."""
        return int(self.core.shape[2])


# =============================================================================
# Initialization
# =============================================================================


def bond_caps(n_sites: int, d: int, m0: int) -> list[int]:
    """Bond dimensions min(m0, d^(j+1), d^(N-j-1)) for bonds j = 0 .. N-2."""
    return [min(m0, d ** (j + 1), d ** (n_sites - j - 1)) for j in range(n_sites - 1)]


def _check_dimensions(n_sites: int, d: int, n_labels: int, m0: int) -> None:
    if n_sites < 1 or d < 2 or n_labels < 1 or m0 < 1:
        raise TensorError(
            f"invalid dimensions N={n_sites}, d={d}, N_L={n_labels}, m0={m0}; "
            "need N >= 1, d >= 2, N_L >= 1, m0 >= 1"
        )


def _site_shapes(n_sites: int, d: int, n_labels: int, m0: int) -> list[tuple[int, ...]]:
    bonds = [1, *bond_caps(n_sites, d, m0), 1]
    shapes: list[tuple[int, ...]] = [(bonds[j], d, bonds[j + 1]) for j in range(n_sites)]
    shapes[0] = (*shapes[0], n_labels)
    return shapes


def _uniform(
    rng: np.random.Generator, shape: tuple[int, ...], kind: ScalarKind
) -> NDArray[Any]:
    values = rng.uniform(-0.5, 0.5, size=shape)
    if kind == ScalarKind.COMPLEX:
        return values + 1j * rng.uniform(-0.5, 0.5, size=shape)
    return values


def _default_kind(map_kind: FeatureMapKind, scalar_kind: ScalarKind | None) -> ScalarKind:
    if scalar_kind is not None:
        return scalar_kind
    if map_kind == FeatureMapKind.PHASE_MODULATED:
        return ScalarKind.COMPLEX
    return ScalarKind.REAL


def init_random(
    n_sites: int,
    d: int,
    n_labels: int,
    m0: int,
    seed: int,
    map_kind: FeatureMapKind = FeatureMapKind.HALF_ANGLE,
    scalar_kind: ScalarKind | None = None,
) -> MpsClassifier:
    """Random MPS with uniform entries, normalized so that ||W|| = 1.

    Args:
        n_sites: Number of sites N.
        d: Local dimension.
        n_labels: Number of labels N_L.
        m0: Requested bond dimension, capped at the exact rank of each bond.
        seed: Random seed.
        map_kind: Feature map recorded in the model.
        scalar_kind: Scalar field; defaults to complex only for the
            phase_modulated map.

    Returns:
        Model with the label on site 0.

    Raises:
        TensorError: On invalid dimensions.
    """
    _check_dimensions(n_sites, d, n_labels, m0)
    kind = _default_kind(map_kind, scalar_kind)
    rng = np.random.default_rng(seed)
    sites = [_uniform(rng, shape, kind) for shape in _site_shapes(n_sites, d, n_labels, m0)]
    model = MpsClassifier(sites, label_site=0, map_kind=map_kind)

    # Spread the normalization evenly so no site over- or underflows
    scale = math.exp(-log_norm_mps(model) / n_sites)
    model.sites = [site * scale for site in model.sites]
    return model


def _rotation_partner(rows: int, cols: int) -> NDArray[np.float64]:
    """Slice F such that cos(t) E + sin(t) F is a rotated identity E."""
    eye = np.eye(rows, cols)
    size = min(rows, cols)
    j = np.zeros((size, size))
    for k in range(0, size - 1, 2):
        j[k, k + 1] = 1.0
        j[k + 1, k] = -1.0
    if size % 2:
        j[size - 1, size - 1] = 1.0
    if rows <= cols:
        return j @ eye
    return eye @ j


def init_randn_eye(
    n_sites: int,
    d: int,
    n_labels: int,
    m0: int,
    seed: int,
    init_std: float = 1e-2,
    map_kind: FeatureMapKind = FeatureMapKind.HALF_ANGLE,
    scalar_kind: ScalarKind | None = None,
) -> MpsClassifier:
    """Near-identity MPS: identity-like slices plus small Gaussian noise.

    The s=0 slice of every site is a rectangular identity and the s=d-1 slice
    its rotation partner, so a product input passes through the chain with
    O(1) amplitude however long the chain is. Each label gets independent
    noise of width `init_std`. The model is not normalized.

    Args:
        n_sites: Number of sites N.
        d: Local dimension.
        n_labels: Number of labels N_L.
        m0: Requested bond dimension (capped as in `init_random`).
        seed: Random seed.
        init_std: Standard deviation of the added noise.
        map_kind: Feature map recorded in the model.
        scalar_kind: Scalar field (see `init_random`).

    Returns:
        Model with the label on site 0.
    """
    _check_dimensions(n_sites, d, n_labels, m0)
    kind = _default_kind(map_kind, scalar_kind)
    rng = np.random.default_rng(seed)
    sites: list[Tensor] = []
    for shape in _site_shapes(n_sites, d, n_labels, m0):
        rows, _, cols = shape[:3]
        base = np.zeros((rows, d, cols))
        base[:, 0, :] = np.eye(rows, cols)
        base[:, d - 1, :] = _rotation_partner(rows, cols)
        if len(shape) == 4:
            base = np.repeat(base[..., None], shape[3], axis=3)
        noise = rng.normal(0.0, init_std, size=shape)
        if kind == ScalarKind.COMPLEX:
            site = base + noise + 1j * rng.normal(0.0, init_std, size=shape)
        else:
            site = base + noise
        sites.append(np.ascontiguousarray(site))
    return MpsClassifier(sites, label_site=0, map_kind=map_kind)


def init_model(
    scheme: InitScheme,
    n_sites: int,
    d: int,
    n_labels: int,
    m0: int,
    seed: int,
    map_kind: FeatureMapKind = FeatureMapKind.HALF_ANGLE,
    init_std: float = 1e-2,
) -> MpsClassifier:
    """Build an initial model with the selected scheme."""
    if scheme == InitScheme.RANDN_EYE:
        return init_randn_eye(n_sites, d, n_labels, m0, seed, init_std, map_kind)
    return init_random(n_sites, d, n_labels, m0, seed, map_kind)


# =============================================================================
# Evaluation
# =============================================================================


def contract_left(env: Tensor, site: Tensor, vecs: Tensor) -> Tensor:
    """Absorb one label-free site into a batch of left environments.

    Args:
        env: (n, m_left) left environments.
        site: (m_left, d, m_right) site tensor.
        vecs: (n, d) local vectors at this site.

    Returns:
        (n, m_right) environments.
    """
    a, d, b = site.shape
    tmp = (env @ site.reshape(a, d * b)).reshape(-1, d, b)
    out: Tensor = np.einsum("nsb,ns->nb", tmp, vecs)
    return out


def contract_right(site: Tensor, env: Tensor, vecs: Tensor) -> Tensor:
    """Absorb one label-free site into a batch of right environments.

    Args:
        site: (m_left, d, m_right) site tensor.
        env: (n, m_right) right environments.
        vecs: (n, d) local vectors at this site.

    Returns:
        (n, m_left) environments.
    """
    a, d, b = site.shape
    tmp = (env @ site.reshape(a * d, b).T).reshape(-1, a, d)
    out: Tensor = np.einsum("nas,ns->na", tmp, vecs)
    return out


def _check_vectors(model: MpsClassifier | CanonicalMps, vectors: Tensor) -> None:
    n_sites = model.n_sites
    d = int(model.sites[0].shape[1])
    if vectors.ndim != 3 or vectors.shape[1:] != (n_sites, d):
        raise TensorError(
            f"input vectors of shape {vectors.shape} do not match a model with "
            f"N={n_sites}, d={d}"
        )
    if scalar_kind_of(vectors) != scalar_kind_of(model.sites[0]):
        raise TensorError("input vectors and model have different scalar kinds")


def left_environment(sites: list[Tensor], vectors: Tensor, stop: int) -> Tensor:
    """Contract sites 0 .. stop-1 with their local vectors; (n, m) result."""
    env = np.ones((vectors.shape[0], 1), dtype=vectors.dtype)
    for j in range(stop):
        env = contract_left(env, sites[j], vectors[:, j])
    return env


def right_environment(sites: list[Tensor], vectors: Tensor, start: int) -> Tensor:
    """Contract sites start .. N-1 with their local vectors; (n, m) result."""
    env = np.ones((vectors.shape[0], 1), dtype=vectors.dtype)
    for j in range(len(sites) - 1, start - 1, -1):
        env = contract_right(sites[j], env, vectors[:, j])
    return env


def evaluate_batch(model: MpsClassifier, vectors: Tensor) -> Tensor:
    """Scores f^l for a batch of encoded inputs.

    Args:
        model: The classifier.
        vectors: (n, N, d) local vectors.

    Returns:
        (n, N_L) scores.

    Raises:
        TensorError: On dimension or scalar-kind mismatch.
    """
    _check_vectors(model, vectors)
    j = model.label_site
    left = left_environment(model.sites, vectors, j)
    right = right_environment(model.sites, vectors, j + 1)
    site = model.sites[j]
    a, d, b, n_labels = site.shape
    tmp = (left @ site.reshape(a, d * b * n_labels)).reshape(-1, d, b, n_labels)
    scores: Tensor = np.einsum("nsbl,ns,nb->nl", tmp, vectors[:, j], right)
    return scores


def evaluate(model: MpsClassifier, encoded: EncodedInput) -> Tensor:
    """Scores f^l(x) of one encoded input as an N_L-vector."""
    return evaluate_batch(model, encoded.vectors[None, ...])[0]


def predict_from_scores(scores: Tensor) -> NDArray[np.int64]:
    """Label of largest |f^l| per row; ties go to the lowest label."""
    return np.argmax(np.abs(np.atleast_2d(scores)), axis=1).astype(np.int64)


def predict_batch(model: MpsClassifier, vectors: Tensor) -> NDArray[np.int64]:
    """Predicted labels for an (n, N, d) batch."""
    return predict_from_scores(evaluate_batch(model, vectors))


def predict(model: MpsClassifier, encoded: EncodedInput) -> int:
    """Predicted label of one encoded input (argmax |f^l|, lowest on ties)."""
    return int(predict_from_scores(evaluate(model, encoded))[0])


def log_norm_mps(model: MpsClassifier) -> float:
    """Natural log of ||W|| by transfer contraction with rescaling per site."""
    transfer = np.ones((1, 1), dtype=model.sites[0].dtype)
    log_sq = 0.0
    for site in model.sites:
        # (a, c) x (c, s, d[, l]) -> (a, s, d[, l]), then close with conj(site)
        half = np.tensordot(transfer, site, axes=([1], [0]))
        closed = [0, 1, 3] if site.ndim == 4 else [0, 1]
        transfer = np.tensordot(np.conj(site), half, axes=(closed, closed))
        scale = float(np.max(np.abs(transfer)))
        if scale == 0.0:
            return -math.inf
        transfer = transfer / scale
        log_sq += math.log(scale)
    log_sq += math.log(abs(float(np.real(transfer[0, 0]))))
    return 0.5 * log_sq


def frobenius_norm_mps(model: MpsClassifier) -> float:
    """||W|| over all labels and physical indices, never materialized."""
    return math.exp(log_norm_mps(model))


def to_full_tensor(model: MpsClassifier) -> Tensor:
    """Materialize W as an order-(N+1) tensor with indices (s_1 .. s_N, l).

    Raises:
        TensorError: If d^N * N_L exceeds FULL_TENSOR_LIMIT.
    """
    if model.d**model.n_sites * model.n_labels > FULL_TENSOR_LIMIT:
        raise TensorError(
            f"full tensor of {model.d}^{model.n_sites} x {model.n_labels} entries exceeds "
            f"the {FULL_TENSOR_LIMIT} limit"
        )
    # Running tensor: (s_1 .. s_k, m_k, l) with the label axis last once seen
    full = model.sites[0][0]
    has_label = model.label_site == 0
    for j in range(1, model.n_sites):
        bond_axis = full.ndim - 2 if has_label else full.ndim - 1
        full = np.tensordot(full, model.sites[j], axes=([bond_axis], [0]))
        if has_label:
            full = np.moveaxis(full, bond_axis, -1)
        has_label = has_label or j == model.label_site
    # Drop the closing dummy bond
    result: Tensor = np.ascontiguousarray(full.reshape(*full.shape[:-2], full.shape[-1]))
    return result


# =============================================================================
# Label movement and canonical forms
# =============================================================================


def merge_bond(model: MpsClassifier, j: int) -> Tensor:
    """Contract sites j and j+1 into a bond tensor (m_{j-1}, d, d, m_{j+1}, N_L).

    The label must be on site j or site j+1.

    Raises:
        TensorError: If j is not a bond or the label is elsewhere.
    """
    if not 0 <= j < model.n_sites - 1:
        raise TensorError(f"bond {j} out of range for {model.n_sites} sites")
    left, right = model.sites[j], model.sites[j + 1]
    if model.label_site == j:
        # (a, s, l, t, c) -> (a, s, t, c, l)
        return permute(contract(left, right, [(2, 0)]), [0, 1, 3, 4, 2])
    if model.label_site == j + 1:
        return contract(left, right, [(2, 0)])
    raise TensorError(f"label is on site {model.label_site}, not on bond {j}")


def split_bond(
    bond: Tensor, direction: SweepDirection, trunc: TruncParams | None
) -> tuple[Tensor, Tensor, SvdResult]:
    """Split a bond tensor back into two sites.

    Moving right, U becomes the left site and S.V the new label site on the
    right. Moving left, U.S becomes the label site on the left and V the right
    site.

    Args:
        bond: (m_{j-1}, d, d, m_{j+1}, N_L) bond tensor.
        direction: Where the label goes.
        trunc: Truncation rule (None keeps the full rank).

    Returns:
        (site j, site j+1, decomposition).
    """
    if direction == SweepDirection.RIGHT:
        res = svd(bond, [0, 1], [2, 3, 4], trunc)
        right = res.s[:, None, None, None] * res.v
        return res.u, np.ascontiguousarray(right), res
    res = svd(bond, [0, 1, 4], [2, 3], trunc)
    # (a, s, l, k) -> (a, s, k, l)
    left = permute(res.u * res.s, [0, 1, 3, 2])
    return left, res.v, res


def _keep_rank(m: int) -> TruncParams:
    # Rank of a merged bond never exceeds the bond it came from
    return TruncParams(max_rank=m, cutoff=0.0, min_rank=m)


def move_label(model: MpsClassifier, target_site: int) -> MpsClassifier:
    """Move the label index to `target_site` without changing W.

    Each step merges the label site with its neighbour and splits the result
    by SVD with the old bond dimension kept.

    Raises:
        TensorError: If target_site is out of range.
    """
    if not 0 <= target_site < model.n_sites:
        raise TensorError(f"target_site {target_site} out of range for {model.n_sites} sites")
    out = model.copy()
    while out.label_site < target_site:
        j = out.label_site
        bond = merge_bond(out, j)
        left, right, _ = split_bond(bond, SweepDirection.RIGHT, _keep_rank(out.sites[j].shape[2]))
        out.sites[j], out.sites[j + 1] = left, right
        out.label_site = j + 1
    while out.label_site > target_site:
        j = out.label_site - 1
        bond = merge_bond(out, j)
        left, right, _ = split_bond(bond, SweepDirection.LEFT, _keep_rank(out.sites[j].shape[2]))
        out.sites[j], out.sites[j + 1] = left, right
        out.label_site = j
    out.validate()
    return out


def _absorb_right(site: Tensor, mat: Tensor) -> Tensor:
    """Multiply a (k, m) matrix into the right bond of a site."""
    if site.ndim == 4:
        return permute(contract(site, mat, [(2, 0)]), [0, 1, 3, 2])
    return contract(site, mat, [(2, 0)])


def canonicalize(model: MpsClassifier, core_site: int) -> CanonicalMps:
    """Bring a model into mixed-canonical form around `core_site`.

    Args:
        model: The classifier.
        core_site: Site whose left bond will hold the core.

    Returns:
        CanonicalMps with left-orthogonal sites 0 .. core_site-1,
        right-orthogonal sites core_site .. N-1 and the label on the core.
    """
    work = move_label(model, core_site)
    sites = list(work.sites)
    c = core_site

    for k in range(c):
        res = svd(sites[k], [0, 1], [2])
        sites[k] = res.u
        carry = res.s[:, None] * res.v
        sites[k + 1] = contract(carry, sites[k + 1], [(1, 0)])

    for k in range(work.n_sites - 1, c, -1):
        res = svd(sites[k], [0], [1, 2])
        sites[k] = res.v
        sites[k - 1] = _absorb_right(sites[k - 1], res.u * res.s)

    # Core site (a, s, b, l): rows (a, l), columns (s, b)
    res = svd(sites[c], [0, 3], [1, 2])
    sites[c] = res.v
    core = permute(res.u * res.s, [0, 2, 1])
    return CanonicalMps(sites=sites, core=core, core_site=c, map_kind=model.map_kind)


def canonical_to_mps(canonical: CanonicalMps) -> MpsClassifier:
    """Absorb the core into its site, giving an ordinary MpsClassifier."""
    sites = [s.copy() for s in canonical.sites]
    c = canonical.core_site
    # (a, k, l) x (k, s, b) -> (a, l, s, b) -> (a, s, b, l)
    sites[c] = permute(contract(canonical.core, sites[c], [(1, 0)]), [0, 2, 3, 1])
    return MpsClassifier(sites, label_site=c, map_kind=canonical.map_kind)


def reduced_features_batch(canonical: CanonicalMps, vectors: Tensor) -> Tensor:
    """Projected inputs: (n, m_left, m_right) outer products of the wing environments."""
    _check_vectors(canonical, vectors)
    c = canonical.core_site
    left = left_environment(canonical.sites, vectors, c)
    right = right_environment(canonical.sites, vectors, c)
    out: Tensor = np.einsum("na,nb->nab", left, right)
    return out


def reduced_features(canonical: CanonicalMps, encoded: EncodedInput) -> Tensor:
    """Projected input of one example as an (m_left, m_right) matrix."""
    return reduced_features_batch(canonical, encoded.vectors[None, ...])[0]


def evaluate_canonical(canonical: CanonicalMps, vectors: Tensor) -> Tensor:
    """Scores sum_ab C[a, b, l] * projected[a, b] for an (n, N, d) batch."""
    projected = reduced_features_batch(canonical, vectors)
    out: Tensor = np.einsum("abl,nab->nl", canonical.core, projected)
    return out


def orthogonality_residuals(canonical: CanonicalMps) -> list[float]:
    """Max deviation from the identity of each site's orthogonality product."""
    residuals = []
    for k, site in enumerate(canonical.sites):
        a, d, b = site.shape
        if k < canonical.core_site:
            mat = site.reshape(a * d, b)
            gram = np.conj(mat).T @ mat
        else:
            mat = site.reshape(a, d * b)
            gram = mat @ np.conj(mat).T
        residuals.append(float(np.max(np.abs(gram - np.eye(gram.shape[0])))))
    return residuals


def bond_spectra(model: MpsClassifier) -> list[NDArray[np.float64]]:
    """Schmidt spectra of W at every bond, label grouped with the left block.

    The core is swept from bond 0 to bond N-2; each spectrum is the full set
    of singular values of the core there, so sum(s^2) = ||W||^2 at every bond.
    """
    if model.n_sites < 2:
        return []
    canonical = canonicalize(model, 1)
    core = canonical.core
    sites = canonical.sites
    spectra = []
    for j in range(model.n_sites - 1):
        spectra.append(svd(core, [0, 2], [1]).spectrum)
        if j == model.n_sites - 2:
            break
        # (a, k, l) x (k, s, b) -> (a, l, s, b); rows (a, s), columns (l, b)
        merged = contract(core, sites[j + 1], [(1, 0)])
        res = svd(merged, [0, 2], [1, 3])
        core = permute(res.s[:, None, None] * res.v, [0, 2, 1])
    return spectra


# =============================================================================
# Serialization
# =============================================================================


def to_bytes(model: MpsClassifier) -> bytes:
    """Encode a model in the little-endian MPSC binary format."""
    kind = model.scalar_kind
    parts = [
        HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            SCALAR_CODES[kind],
            model.n_sites,
            model.d,
            model.n_labels,
            model.label_site,
            MAP_CODES[model.map_kind],
        )
    ]
    dtype = _PAYLOAD_DTYPES[kind]
    for site in model.sites:
        parts.append(EXTENTS.pack(site.shape[0], site.shape[2]))
        parts.append(np.ascontiguousarray(site, dtype=dtype).tobytes(order="C"))
    return b"".join(parts)


def from_bytes(payload: bytes) -> MpsClassifier:
    """Decode a model from the MPSC binary format.

    Raises:
        ModelFormatError: On bad magic, unknown version or codes, truncation,
            trailing bytes, non-finite values or an inconsistent chain.
    """
    if len(payload) < HEADER.size:
        raise ModelFormatError(f"file too short for header ({len(payload)} bytes)")
    magic, version, scalar_code, n_sites, d, n_labels, label_site, map_code = HEADER.unpack_from(
        payload
    )
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    kinds = {v: k for k, v in SCALAR_CODES.items()}
    maps = {v: k for k, v in MAP_CODES.items()}
    if scalar_code not in kinds:
        raise ModelFormatError(f"unknown scalar kind code {scalar_code}")
    if map_code not in maps:
        raise ModelFormatError(f"unknown feature map code {map_code}")
    if n_sites < 1 or not 0 <= label_site < n_sites:
        raise ModelFormatError(f"invalid N={n_sites} or label_site={label_site}")

    dtype = _PAYLOAD_DTYPES[kinds[scalar_code]]
    offset = HEADER.size
    sites: list[Tensor] = []
    for j in range(n_sites):
        if offset + EXTENTS.size > len(payload):
            raise ModelFormatError(f"file truncated before site {j} extents")
        left, right = EXTENTS.unpack_from(payload, offset)
        offset += EXTENTS.size
        shape: tuple[int, ...] = (left, d, right, n_labels) if j == label_site else (left, d, right)
        count = math.prod(shape)
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(payload):
            raise ModelFormatError(f"file truncated inside site {j} payload")
        values = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        offset += nbytes
        if not np.all(np.isfinite(values)):
            raise ModelFormatError(f"site {j} payload contains non-finite values")
        sites.append(values.astype(dtype.newbyteorder("="), copy=True).reshape(shape))
    if offset != len(payload):
        raise ModelFormatError(f"{len(payload) - offset} trailing bytes after last site")

    try:
        return MpsClassifier(sites, label_site=label_site, map_kind=maps[map_code])
    except TensorError as e:
        raise ModelFormatError(f"inconsistent model structure: {e}") from e


def save(model: MpsClassifier, path: Path) -> None:
    """Write a model file atomically."""
    atomic_write_bytes(path, to_bytes(model))


def load(path: Path) -> MpsClassifier:
    """Read a model file.

    Raises:
        FileNotFoundError: If the file does not exist.
        ModelFormatError: If the contents are not a valid model.
    """
    return from_bytes(Path(path).read_bytes())
