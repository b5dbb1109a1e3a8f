"""Tests for the two-site sweeping optimizer in tnml.sweep_trainer."""

from collections.abc import Sequence

import numpy as np
import pytest
from pydantic import ValidationError

from tnml import mps_model
from tnml.data_pipeline import EncodedDataset, LabeledDataset
from tnml.exceptions import CacheError, TensorError
from tnml.feature_maps import LocalFeatureMap, encode_batch
from tnml.models import FeatureMapKind, SweepDirection, TrainConfig, TruncParams
from tnml.mps_model import (
    MpsClassifier,
    evaluate_batch,
    init_random,
    left_environment,
    move_label,
    right_environment,
    split_bond,
)
from tnml.sweep_trainer import (
    BondTensor,
    EnvironmentCache,
    advance_cache,
    bond_flops,
    confusion_matrix,
    error_rate,
    evaluate_metrics,
    form_bond_tensor,
    gauge_fix,
    gradient,
    local_cost,
    local_scores,
    local_scores_batch,
    quadratic_cost,
    sweep,
    train,
    update_and_split,
)
from tnml.tensor_core import SvdResult, Tensor

EXACT = TruncParams(max_rank=64, cutoff=0.0)


class TestEnvironmentCache:
    """Tests for cached projections."""

    def test_local_scores_match_full(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that scores through the cache equal full evaluation at every bond."""
        config = TrainConfig(learning_rate=0.0, trunc=EXACT)
        vectors = small_dataset.vectors
        model = small_model
        cache = EnvironmentCache(model, vectors, 0)
        for j in range(model.n_sites - 1):
            bond = form_bond_tensor(model, j)
            np.testing.assert_allclose(
                local_scores_batch(bond, cache),
                evaluate_batch(model, vectors),
                rtol=1e-10,
                atol=1e-13,
            )
            model, _ = update_and_split(
                model,
                bond,
                np.zeros_like(bond.tensor),
                config,
                SweepDirection.RIGHT,
                small_dataset,
                cache,
            )
            if j < model.n_sites - 2:
                cache.advance(model, SweepDirection.RIGHT)
                np.testing.assert_allclose(
                    cache.left_env(),
                    left_environment(model.sites, vectors, j + 1),
                    rtol=1e-12,
                    atol=1e-14,
                )

    def test_leftward_advance(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that a leftward advance rebuilds the right environment."""
        config = TrainConfig(learning_rate=0.0, trunc=EXACT)
        model = move_label(small_model, 4)
        vectors = small_dataset.vectors
        cache = EnvironmentCache(model, vectors, 3)
        bond = form_bond_tensor(model, 3)
        delta = np.zeros_like(bond.tensor)
        model, _ = update_and_split(
            model, bond, delta, config, SweepDirection.LEFT, small_dataset, cache
        )
        assert advance_cache(cache, model, SweepDirection.LEFT) is cache
        assert cache.bond == 2
        np.testing.assert_allclose(
            cache.right_env(), right_environment(model.sites, vectors, 4), rtol=1e-12, atol=1e-14
        )

    def test_single_example_scores(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test the single-example kernel against the batch kernel."""
        cache = EnvironmentCache(small_model, small_dataset.vectors, 0)
        bond = form_bond_tensor(small_model, 0)
        batch = local_scores_batch(bond, cache)
        vec = small_dataset.vectors[3]
        single = local_scores(bond, cache.left_env()[3], cache.right_env()[3], vec[0], vec[1])
        np.testing.assert_allclose(single, batch[3], rtol=1e-12)

    def test_bond_out_of_range(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that a cache needs a real bond."""
        with pytest.raises(CacheError, match="out of range"):
            EnvironmentCache(small_model, small_dataset.vectors, 4)

    def test_label_must_be_on_bond(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that the label must sit on the active bond."""
        with pytest.raises(CacheError, match="outside bond"):
            EnvironmentCache(small_model, small_dataset.vectors, 2)

    def test_advance_before_split(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that a site still carrying the label cannot be absorbed."""
        cache = EnvironmentCache(small_model, small_dataset.vectors, 0)
        with pytest.raises(CacheError, match="still carries the label"):
            cache.advance(small_model, SweepDirection.RIGHT)

    def test_advance_past_boundary(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that the cache cannot leave the chain."""
        cache = EnvironmentCache(small_model, small_dataset.vectors, 0)
        with pytest.raises(CacheError, match="past bond 0"):
            cache.advance(small_model, SweepDirection.LEFT)

    def test_desynchronized_cache(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that a bond tensor and a cache at different bonds are rejected."""
        model = move_label(small_model, 1)
        cache = EnvironmentCache(model, small_dataset.vectors, 0)
        with pytest.raises(CacheError, match="cache is at bond 0"):
            gradient(form_bond_tensor(model, 1), small_dataset, cache)


class TestGradient:
    """Tests for the bond gradient."""

    @staticmethod
    def _setup(
        model: MpsClassifier, dataset: EncodedDataset
    ) -> tuple[BondTensor, EnvironmentCache]:
        model = move_label(model, 1)
        return form_bond_tensor(model, 1), EnvironmentCache(model, dataset.vectors, 1)

    def test_matches_finite_differences(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that the gradient is minus the cost derivative."""
        bond, cache = self._setup(small_model, small_dataset)
        delta = gradient(bond, small_dataset, cache)
        gen = np.random.default_rng(0)
        eps = 1e-5
        for _ in range(8):
            idx = tuple(int(gen.integers(0, n)) for n in bond.tensor.shape)
            step = np.zeros_like(bond.tensor)
            step[idx] = eps
            plus = local_cost(BondTensor(bond.tensor + step, 1), cache, small_dataset)
            minus = local_cost(BondTensor(bond.tensor - step, 1), cache, small_dataset)
            numeric = (plus - minus) / (2 * eps)
            assert -delta[idx] == pytest.approx(numeric, rel=1e-5, abs=1e-8)

    def test_complex_finite_differences(self, rng: np.random.Generator) -> None:
        """Test real and imaginary parts of a complex bond gradient."""
        fmap = LocalFeatureMap(kind=FeatureMapKind.PHASE_MODULATED)
        model = init_random(4, 2, 2, 2, seed=3, map_kind=FeatureMapKind.PHASE_MODULATED)
        dataset = EncodedDataset.from_inputs(
            rng.uniform(0.0, 1.0, size=(15, 4)), rng.integers(0, 2, size=15), fmap, 2
        )
        bond, cache = self._setup(model, dataset)
        delta = gradient(bond, dataset, cache)
        eps = 1e-5
        idx = (0, 1, 0, 1, 1)
        for unit, part in ((1.0, np.real), (1j, np.imag)):
            step = np.zeros_like(bond.tensor)
            step[idx] = eps * unit
            plus = local_cost(BondTensor(bond.tensor + step, 1), cache, dataset)
            minus = local_cost(BondTensor(bond.tensor - step, 1), cache, dataset)
            numeric = (plus - minus) / (2 * eps)
            assert -part(delta[idx]) == pytest.approx(numeric, rel=1e-5, abs=1e-8)

    def test_threaded_reduction_matches(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that chunked threaded gradients equal the serial gradient."""
        bond, cache = self._setup(small_model, small_dataset)
        serial = gradient(bond, small_dataset, cache, TrainConfig(threads=1))
        threaded = gradient(
            bond, small_dataset, cache, TrainConfig(threads=4, chunk_size=7, deterministic=True)
        )
        unordered = gradient(
            bond, small_dataset, cache, TrainConfig(threads=4, chunk_size=7, deterministic=False)
        )
        np.testing.assert_allclose(threaded, serial, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(unordered, serial, rtol=1e-12, atol=1e-14)

    def test_deterministic_is_bit_stable(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that ordered reduction gives identical bits on repeated runs."""
        bond, cache = self._setup(small_model, small_dataset)
        config = TrainConfig(threads=3, chunk_size=5, deterministic=True)
        first = gradient(bond, small_dataset, cache, config)
        second = gradient(bond, small_dataset, cache, config)
        np.testing.assert_array_equal(first, second)

    def test_gradient_shape_checked(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that update_and_split validates the gradient shape."""
        bond, cache = self._setup(small_model, small_dataset)
        model = move_label(small_model, 1)
        with pytest.raises(TensorError, match="gradient shape"):
            update_and_split(
                model,
                bond,
                np.zeros((1, 2)),
                TrainConfig(),
                SweepDirection.RIGHT,
                small_dataset,
                cache,
            )

    def test_split_drops_to_exact_rank(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that a rank-2 bond stored at dimension 4 is split back to rank 2."""
        model = move_label(small_model, 1)
        assert model.bond_dims[1] == 4
        # Only the first two slices of the bond carry weight
        low_rank = model.sites[2].copy()
        low_rank[2:] = 0.0
        model.sites[2] = low_rank
        before = evaluate_batch(model, small_dataset.vectors)
        cache = EnvironmentCache(model, small_dataset.vectors, 1)
        bond = form_bond_tensor(model, 1)
        config = TrainConfig(learning_rate=0.0, trunc=TruncParams(max_rank=64, cutoff=1e-10))
        split, outcome = update_and_split(
            model,
            bond,
            np.zeros_like(bond.tensor),
            config,
            SweepDirection.RIGHT,
            small_dataset,
            cache,
        )
        assert outcome.kept_rank == 2
        assert split.bond_dims[1] == 2
        assert outcome.discarded_weight < 1e-20
        np.testing.assert_allclose(
            evaluate_batch(split, small_dataset.vectors), before, rtol=1e-9, atol=1e-12
        )


class TestSweep:
    """Tests for sweeps and training."""

    def test_zero_rate_keeps_scores(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that a sweep with alpha = 0 only changes the gauge."""
        config = TrainConfig(learning_rate=0.0, trunc=EXACT)
        before = evaluate_batch(small_model, small_dataset.vectors)
        model, report = sweep(small_model, small_dataset, config)
        np.testing.assert_allclose(
            evaluate_batch(model, small_dataset.vectors), before, rtol=1e-9, atol=1e-12
        )
        assert model.label_site == 0
        assert all(record.step == 0.0 for record in report.bonds)

    def test_visits_every_bond_both_ways(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test the visiting order of one sweep."""
        _, report = sweep(small_model, small_dataset, TrainConfig(trunc=EXACT))
        visited = [(r.bond, r.direction) for r in report.bonds]
        assert visited == [(j, SweepDirection.RIGHT) for j in range(4)] + [
            (j, SweepDirection.LEFT) for j in range(3, -1, -1)
        ]
        assert all(r.flops > 0 for r in report.bonds)

    def test_cost_never_increases(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that backtracking without truncation makes the cost monotone."""
        initial = quadratic_cost(small_model, small_dataset)
        config = TrainConfig(learning_rate=0.5, sweeps=3, trunc=EXACT)
        _, report = train(small_model, small_dataset, config)
        costs = [initial, *(r.cost for r in report.sweeps)]
        assert all(b <= a + 1e-10 for a, b in zip(costs, costs[1:], strict=False))
        assert costs[-1] < costs[0]
        assert all(r.local_cost_after <= r.local_cost_before + 1e-10 for r in report.bonds)

    def test_truncation_caps_bonds(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that max_rank bounds every bond after training."""
        config = TrainConfig(sweeps=1, trunc=TruncParams(max_rank=2))
        model, report = train(small_model, small_dataset, config)
        assert max(model.bond_dims) <= 2
        assert report.final is not None
        assert report.final.bond_dims == model.bond_dims

    def test_separable_toy_reaches_zero_error(self, separable_inputs: LabeledDataset) -> None:
        """Test that a two-pixel set separated by the first pixel is learned."""
        dataset = separable_inputs.encode(LocalFeatureMap())
        model = init_random(2, 2, 2, 2, seed=0)
        config = TrainConfig(
            learning_rate=1.0, sweeps=10, steps_per_bond=20, trunc=TruncParams(max_rank=4)
        )
        model, report = train(model, dataset, config)
        assert error_rate(model, dataset) == 0.0
        assert report.sweeps[-1].cost <= report.sweeps[0].cost

    def test_final_error_matches_evaluation(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that the reported training error equals a fresh evaluation."""
        model, report = train(small_model, small_dataset, TrainConfig(sweeps=1, trunc=EXACT))
        assert report.final is not None
        assert report.final.train_error == error_rate(model, small_dataset)
        assert evaluate_metrics(model, small_dataset).error_rate == report.final.train_error

    def test_reproducible(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that identical inputs give identical models."""
        config = TrainConfig(sweeps=1, threads=2, chunk_size=8)
        a, _ = train(small_model, small_dataset, config)
        b, _ = train(small_model, small_dataset, config)
        for sa, sb in zip(a.sites, b.sites, strict=True):
            np.testing.assert_array_equal(sa, sb)

    def test_on_sweep_callback(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that the callback sees every sweep record."""
        seen: list[int] = []
        train(
            small_model,
            small_dataset,
            TrainConfig(sweeps=2, record_bonds=False),
            on_sweep=lambda r: seen.append(r.sweep),
        )
        assert seen == [1, 2]

    def test_single_site_rejected(self, half_angle: LocalFeatureMap) -> None:
        """Test that one-site models cannot be swept."""
        model = init_random(1, 2, 2, 1, seed=0)
        dataset = EncodedDataset.from_inputs(np.array([[0.5]]), np.array([0]), half_angle, 2)
        with pytest.raises(TensorError, match="at least two sites"):
            sweep(model, dataset, TrainConfig())

    def test_gauge_fix_right_orthogonal(self, small_model: MpsClassifier) -> None:
        """Test that the gauge-fixed wings are right-orthogonal."""
        fixed = gauge_fix(small_model)
        assert fixed.label_site == 0
        for site in fixed.sites[1:]:
            mat = site.reshape(site.shape[0], -1)
            np.testing.assert_allclose(mat @ mat.T, np.eye(site.shape[0]), atol=1e-12)

    def test_only_gradient_solver(self) -> None:
        """Test that other bond solvers are rejected."""
        with pytest.raises(ValidationError):
            TrainConfig(bond_solver="conjugate_gradient")  # type: ignore[arg-type]


class TestMetrics:
    """Tests for classification metrics."""

    def test_single_class_model(self, half_angle: LocalFeatureMap) -> None:
        """Test that a one-label model on one-label data has zero error."""
        model = init_random(3, 2, 1, 2, seed=0)
        inputs = np.random.default_rng(0).uniform(0.0, 1.0, size=(10, 3))
        dataset = EncodedDataset.from_inputs(inputs, np.zeros(10), half_angle, 1)
        metrics = evaluate_metrics(model, dataset)
        assert metrics.error_rate == 0.0
        assert metrics.misclassified_count == 0
        assert metrics.confusion_matrix == [[10]]

    def test_confusion_matrix_counts(
        self, small_model: MpsClassifier, small_dataset: EncodedDataset
    ) -> None:
        """Test that the confusion matrix agrees with the error rate."""
        matrix = confusion_matrix(small_model, small_dataset)
        assert matrix.sum() == 40
        wrong = 40 - np.trace(matrix)
        assert error_rate(small_model, small_dataset) == pytest.approx(wrong / 40)
        np.testing.assert_array_equal(
            matrix.sum(axis=1), np.bincount(small_dataset.labels, minlength=3)
        )

    def test_encoded_product_matches(self, small_model: MpsClassifier) -> None:
        """Test that encode_batch output feeds evaluation directly."""
        vectors = encode_batch(np.full((2, 5), 0.5), LocalFeatureMap())
        assert evaluate_batch(small_model, vectors).shape == (2, 3)


class TestFlops:
    """Tests for the analytic cost model."""

    def test_measured_work_is_cubic_in_bond_dimension(
        self, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """Test that merging and splitting a bond costs about 8x more at 2m than at m."""
        work: list[int] = []
        real_contract, real_svd = mps_model.contract, mps_model.svd

        def counting_contract(a: Tensor, b: Tensor, pairs: Sequence[tuple[int, int]]) -> Tensor:
            shared = int(np.prod([a.shape[i] for i, _ in pairs]))
            work.append(a.size * b.size // shared)
            return real_contract(a, b, pairs)

        def counting_svd(
            t: Tensor,
            row_axes: Sequence[int],
            col_axes: Sequence[int],
            trunc: TruncParams | None = None,
        ) -> SvdResult:
            rows = int(np.prod([t.shape[i] for i in row_axes]))
            cols = int(np.prod([t.shape[i] for i in col_axes]))
            work.append(rows * cols * min(rows, cols))
            return real_svd(t, row_axes, col_axes, trunc)

        def visit_work(m: int) -> int:
            model = move_label(init_random(10, 2, 3, m, seed=0), 4)
            assert model.bond_dims[3] == model.bond_dims[4] == model.bond_dims[5] == m
            work.clear()
            with monkeypatch.context() as patch:
                patch.setattr(mps_model, "contract", counting_contract)
                patch.setattr(mps_model, "svd", counting_svd)
                bond = form_bond_tensor(model, 4)
                split_bond(bond.tensor, SweepDirection.RIGHT, TruncParams(max_rank=m, cutoff=0.0))
            return sum(work)

        for m in (2, 4, 8):
            assert visit_work(2 * m) / visit_work(m) == pytest.approx(8.0, rel=0.25)

    def test_trials_add_svd_cost(self) -> None:
        """Test that backtracking trials add cost."""
        assert bond_flops(10, 4, 2, 4, 3, (8, 24), trials=3) > bond_flops(
            10, 4, 2, 4, 3, (8, 24), trials=1
        )
