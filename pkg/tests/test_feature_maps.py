"""Tests for local feature maps in tnml.feature_maps."""

import numpy as np
import pytest
from pydantic import ValidationError

from tnml.exceptions import FeatureMapError
from tnml.feature_maps import (
    LocalFeatureMap,
    encode,
    encode_batch,
    gram_quadrature,
    map_local,
    map_values,
)
from tnml.models import FeatureMapKind, ScalarKind


class TestLocalFeatureMap:
    """Tests for map construction."""

    def test_defaults(self) -> None:
        """Test the default half-angle map."""
        fmap = LocalFeatureMap()
        assert fmap.kind == FeatureMapKind.HALF_ANGLE
        assert fmap.d == 2
        assert fmap.scalar_kind == ScalarKind.REAL

    def test_two_component_maps_need_d2(self) -> None:
        """Test that only spin_coherent accepts d > 2."""
        with pytest.raises(FeatureMapError, match="requires d = 2"):
            LocalFeatureMap(kind=FeatureMapKind.HALF_ANGLE, d=3)
        with pytest.raises(FeatureMapError, match="phase_modulated map requires d = 2"):
            LocalFeatureMap(kind="phase_modulated", d=4)
        assert LocalFeatureMap(kind=FeatureMapKind.SPIN_COHERENT, d=6).d == 6

    def test_validated_dimension_error(self) -> None:
        """Test that model_validate reports the same rule as a ValueError."""
        with pytest.raises(ValidationError, match="requires d = 2") as excinfo:
            LocalFeatureMap.model_validate({"kind": "full_angle", "d": 3})
        assert isinstance(excinfo.value, ValueError)

    def test_unknown_kind_left_to_validation(self) -> None:
        """Test that an unknown kind fails field validation, not the dimension check."""
        with pytest.raises(ValidationError, match="kind"):
            LocalFeatureMap(kind="sawtooth", d=2)

    def test_phase_map_is_complex(self) -> None:
        """Test the scalar kind and measure of the phase map."""
        fmap = LocalFeatureMap(kind=FeatureMapKind.PHASE_MODULATED)
        assert fmap.scalar_kind == ScalarKind.COMPLEX
        assert fmap.measure_weight == 2.0
        assert fmap.is_orthonormal


class TestMapValues:
    """Tests for evaluating maps."""

    def test_half_angle_endpoints(self) -> None:
        """Test phi(0) = (1, 0) and phi(1) = (0, 1)."""
        np.testing.assert_allclose(map_local(LocalFeatureMap(), 0.0), [1.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(map_local(LocalFeatureMap(), 1.0), [0.0, 1.0], atol=1e-15)

    @pytest.mark.parametrize(
        ("kind", "d"),
        [
            (FeatureMapKind.HALF_ANGLE, 2),
            (FeatureMapKind.FULL_ANGLE, 2),
            (FeatureMapKind.PHASE_MODULATED, 2),
            (FeatureMapKind.SPIN_COHERENT, 5),
        ],
    )
    def test_unit_norm(self, kind: FeatureMapKind, d: int) -> None:
        """Test that every map produces unit vectors."""
        xs = np.linspace(0.0, 1.0, 11)
        phi = map_values(LocalFeatureMap(kind=kind, d=d), xs)
        assert phi.shape == (11, d)
        np.testing.assert_allclose(np.linalg.norm(phi, axis=1), 1.0, atol=1e-12)

    def test_spin_coherent_d2_is_half_angle(self) -> None:
        """Test that spin_coherent with d=2 equals the half-angle map."""
        xs = np.linspace(0.0, 1.0, 7)
        np.testing.assert_allclose(
            map_values(LocalFeatureMap(kind=FeatureMapKind.SPIN_COHERENT, d=2), xs),
            map_values(LocalFeatureMap(), xs),
            atol=1e-15,
        )

    def test_out_of_range(self) -> None:
        """Test that inputs outside [0, 1] are rejected."""
        with pytest.raises(FeatureMapError, match=r"\[0, 1\]"):
            map_values(LocalFeatureMap(), [0.5, 1.2])
        with pytest.raises(FeatureMapError, match="non-finite"):
            map_values(LocalFeatureMap(), [np.nan])


class TestEncode:
    """Tests for product-state encoding."""

    def test_encode_vector(self) -> None:
        """Test encoding one input with a label."""
        enc = encode([0.0, 0.5, 1.0], LocalFeatureMap(), label=4)
        assert enc.n_sites == 3
        assert enc.d == 2
        assert enc.label == 4

    def test_encode_batch_shape(self) -> None:
        """Test batch encoding shape."""
        batch = encode_batch(np.full((4, 6), 0.25), LocalFeatureMap())
        assert batch.shape == (4, 6, 2)

    def test_encode_rejects_matrix(self) -> None:
        """Test that encode wants a 1-D vector."""
        with pytest.raises(FeatureMapError, match="1-D"):
            encode(np.zeros((2, 2)), LocalFeatureMap())


class TestGramQuadrature:
    """Tests for orthonormality under the map measure."""

    @pytest.mark.parametrize("kind", [FeatureMapKind.PHASE_MODULATED, FeatureMapKind.FULL_ANGLE])
    def test_orthonormal_maps(self, kind: FeatureMapKind) -> None:
        """Test that orthonormal maps have an identity Gram matrix."""
        gram = gram_quadrature(LocalFeatureMap(kind=kind), n_nodes=64)
        np.testing.assert_allclose(gram, np.eye(2), atol=1e-10)

    def test_half_angle_not_orthogonal(self) -> None:
        """Test that the half-angle components overlap."""
        gram = gram_quadrature(LocalFeatureMap(), n_nodes=64)
        assert abs(gram[0, 1]) > 0.1
        assert gram[0, 1] == pytest.approx(1.0 / np.pi, rel=1e-10)

    def test_too_few_nodes(self) -> None:
        """Test the node floor."""
        with pytest.raises(FeatureMapError, match=">= 16"):
            gram_quadrature(LocalFeatureMap(), n_nodes=8)
