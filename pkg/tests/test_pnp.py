"""Plug-and-play engine: reduction properties, editing flow, statistics."""

import numpy as np
import pytest
from problems import flat_object_like, rms, toy_problem

from ptyclean.core import EditRequest, PnpConfig, SolverConfig
from ptyclean.editors import Editor, EditorSpec, IdentityEditor
from ptyclean.pnp import (
    PnpEditError,
    PnpResult,
    dual_update,
    phase_only_edit,
    run_pnp,
    statistics_match,
)
from ptyclean.solvers import run_solver


class CountingEditor(Editor):
    """Identity-valued editor that is not the identity type, with a call log."""

    def __init__(self):
        self.calls = 0

    def edit(self, image, request):
        self.calls += 1
        return np.asarray(image, dtype=np.float64).copy()


class FailingEditor(Editor):
    def edit(self, image, request):
        raise RuntimeError("synthetic editor crash")


class ConstantEditor(Editor):
    def __init__(self, value):
        self.value = value

    def edit(self, image, request):
        return np.full_like(np.asarray(image, dtype=np.float64), self.value)


@pytest.fixture(scope="module")
def problem():
    return toy_problem()


class TestStatisticsMatch:
    def test_identical_images_unchanged(self):
        rng = np.random.default_rng(201)
        img = rng.normal(size=(16, 16))
        out = statistics_match(img, img.copy(), 0.5)
        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_affine_corruption_inverted(self):
        rng = np.random.default_rng(202)
        pre = rng.normal(size=(16, 16))
        post = 2.0 * pre + 3.0
        out = statistics_match(pre, post, np.inf)
        np.testing.assert_allclose(out, pre, atol=1e-10)

    def test_masked_statistics_recovered(self):
        rng = np.random.default_rng(203)
        pre = rng.normal(size=(32, 32))
        post = 0.7 * pre + 0.2 + 0.1 * rng.normal(size=(32, 32))
        out = statistics_match(pre, post, 0.5)
        mask = np.abs(post - pre) < 0.5
        assert np.mean(out[mask]) == pytest.approx(np.mean(pre[mask]), abs=1e-6)
        assert np.std(out[mask]) == pytest.approx(np.std(pre[mask]), abs=1e-6)

    def test_empty_mask_rejected(self):
        pre = np.zeros((8, 8))
        post = np.ones((8, 8))
        with pytest.raises(ValueError, match="mask is empty"):
            statistics_match(pre, post, 0.5)

    def test_constant_post_rejected(self):
        pre = np.random.default_rng(204).normal(size=(8, 8))
        post = 0.1 * np.ones((8, 8))
        with pytest.raises(ValueError, match="constant"):
            statistics_match(pre, post, np.inf)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            statistics_match(np.zeros((4, 4)), np.zeros((8, 8)), 0.5)


class TestDualUpdate:
    def test_consensus_leaves_dual_unchanged(self):
        u = np.full((2, 4, 4), 0.3 + 0.1j)
        o = np.ones((2, 4, 4), dtype=complex)
        np.testing.assert_array_equal(dual_update(u, o, o.copy()), u)

    def test_basic_accumulation(self):
        u = np.zeros((1, 2, 2))
        out = dual_update(u, np.ones((1, 2, 2)), np.zeros((1, 2, 2)))
        np.testing.assert_array_equal(out, np.ones((1, 2, 2)))

    def test_linear_growth(self):
        u = np.zeros((1, 2, 2))
        o = np.full((1, 2, 2), 0.25)
        v = np.zeros((1, 2, 2))
        for _ in range(4):
            u = dual_update(u, o, v)
        np.testing.assert_allclose(u, 1.0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            dual_update(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((3, 3)))


class TestPhaseOnlyEdit:
    def stack(self, seed=211, n=16):
        rng = np.random.default_rng(seed)
        mag = 0.8 + 0.4 * rng.uniform(size=(2, n, n))
        phase = rng.uniform(-2.0, 2.0, size=(2, n, n))
        return mag * np.exp(1j * phase)

    def test_identity_editor_keeps_phase_flattens_magnitude(self):
        stack = self.stack()
        out = phase_only_edit(stack, IdentityEditor(), EditRequest())
        np.testing.assert_allclose(np.angle(out), np.angle(stack), atol=1e-6)
        for j in range(2):
            np.testing.assert_allclose(
                np.abs(out[j]), np.mean(np.abs(stack[j])), atol=1e-12
            )

    def test_all_zero_editor_pins_phase_at_value_min(self):
        stack = self.stack()
        req = EditRequest(value_min=-1.5, value_max=2.5)
        out = phase_only_edit(stack, ConstantEditor(0.0), req)
        np.testing.assert_allclose(np.angle(out), -1.5, atol=1e-12)

    def test_display_mapping_round_trip(self):
        rng = np.random.default_rng(212)
        phase = rng.uniform(-0.9, 0.9, size=(1, 12, 12))
        stack = np.exp(1j * phase)
        req = EditRequest(value_min=-1.0, value_max=1.0)
        out = phase_only_edit(stack, IdentityEditor(), req)
        np.testing.assert_allclose(np.angle(out), phase, atol=1e-6)

    def test_2d_input_returns_2d(self):
        out = phase_only_edit(
            np.exp(1j * np.zeros((8, 8))), IdentityEditor(), EditRequest()
        )
        assert out.shape == (8, 8)

    def test_per_slice_editor_list(self):
        stack = self.stack()
        req = EditRequest(value_min=-np.pi, value_max=np.pi)
        out = phase_only_edit(
            stack, [ConstantEditor(0.5), IdentityEditor()], req
        )
        np.testing.assert_allclose(np.angle(out[0]), 0.0, atol=1e-12)
        np.testing.assert_allclose(np.angle(out[1]), np.angle(stack[1]),
                                   atol=1e-6)

    def test_wrong_editor_count_rejected(self):
        with pytest.raises(ValueError, match="editors"):
            phase_only_edit(self.stack(), [IdentityEditor()] * 3, EditRequest())

    def test_editor_shape_mismatch_rejected(self):
        class WrongShape(Editor):
            def edit(self, image, request):
                return np.zeros((2, 2))

        with pytest.raises(ValueError, match="shape"):
            phase_only_edit(self.stack(), WrongShape(), EditRequest())

    def test_stats_matching_applied_to_selected_slices(self):
        stack = self.stack()

        class Shifter(Editor):
            def edit(self, image, request):
                return np.asarray(image) * 1.05 + 0.01

        req = EditRequest(value_min=-np.pi, value_max=np.pi)
        out = phase_only_edit(
            stack, Shifter(), req,
            stats_match=True, stats_mask_threshold=10.0, stats_slices=(0,),
        )
        span = 2 * np.pi
        pre0 = (np.angle(stack[0]) + np.pi) / span
        post0 = (np.angle(out[0]) + np.pi) / span
        assert np.mean(post0) == pytest.approx(np.mean(pre0), abs=1e-6)
        assert np.std(post0) == pytest.approx(np.std(pre0), abs=1e-6)
        # slice 1 was not matched, so its mean kept the editor's shift
        pre1 = (np.angle(stack[1]) + np.pi) / span
        post1 = (np.angle(out[1]) + np.pi) / span
        assert abs(np.mean(post1) - np.mean(pre1)) > 1e-3


class TestRunPnp:
    def test_identity_tau_zero_reduces_to_vanilla(self, problem):
        obj, probe, grid, data = problem
        start = flat_object_like(obj)
        solver_cfg = SolverConfig(n_iterations=15, rng_seed=11)
        vanilla = run_solver(start, probe, grid, data, solver_cfg)
        pnp_cfg = PnpConfig(tau=0.0, gamma=0.8, n_inner=5, n_outer=3)
        result = run_pnp(pnp_cfg, solver_cfg, grid, data, start, probe,
                         IdentityEditor())
        assert rms(result.final_object.slices, vanilla.object.slices) <= 1e-5
        assert rms(result.final_probe.modes, vanilla.probe.modes) <= 1e-5
        np.testing.assert_array_equal(
            result.inner_loss_history, vanilla.loss_history
        )

    def test_single_outer_epoch_is_vanilla(self, problem):
        obj, probe, grid, data = problem
        start = flat_object_like(obj)
        solver_cfg = SolverConfig(n_iterations=6, rng_seed=12)
        vanilla = run_solver(start, probe, grid, data, solver_cfg)
        pnp_cfg = PnpConfig(tau=1e-3, gamma=0.7, n_inner=6, n_outer=1)
        result = run_pnp(pnp_cfg, solver_cfg, grid, data, start, probe,
                         ConstantEditor(0.3))
        np.testing.assert_array_equal(
            result.final_object.slices, vanilla.object.slices
        )

    def test_gamma_zero_ignores_editor(self, problem):
        # with gamma = 0 the relaxation discards v', so v tracks o, u stays
        # zero, and the choice of editor cannot influence the result
        obj, probe, grid, data = problem
        start = flat_object_like(obj)
        solver_cfg = SolverConfig(rng_seed=13)
        pnp_cfg = PnpConfig(tau=0.2, gamma=0.0, n_inner=3, n_outer=3)
        results = [
            run_pnp(pnp_cfg, solver_cfg, grid, data, start, probe, editor)
            for editor in (ConstantEditor(0.9), IdentityEditor())
        ]
        np.testing.assert_array_equal(
            results[0].final_object.slices, results[1].final_object.slices
        )
        assert results[0].consensus_history == (0.0,) * 3

    def test_editing_schedule_respects_last_epoch(self, problem):
        obj, probe, grid, data = problem
        editor = CountingEditor()
        pnp_cfg = PnpConfig(tau=1e-4, gamma=0.8, n_inner=2, n_outer=4,
                            edit_last_epoch=2)
        run_pnp(pnp_cfg, SolverConfig(rng_seed=14), grid, data,
                flat_object_like(obj), probe, editor)
        assert editor.calls == 2  # epochs 0 and 1 only, one slice each

    def test_result_bookkeeping(self, problem):
        obj, probe, grid, data = problem
        pnp_cfg = PnpConfig(tau=1e-4, gamma=0.8, n_inner=2, n_outer=3,
                            save_snapshots=True)
        result = run_pnp(pnp_cfg, SolverConfig(rng_seed=15), grid, data,
                         flat_object_like(obj), probe, CountingEditor())
        assert len(result.per_epoch_loss) == 3
        assert len(result.consensus_history) == 3
        assert len(result.per_epoch_snapshots) == 3
        assert len(result.inner_loss_history) == 6
        assert result.per_epoch_loss == (
            result.inner_loss_history[1],
            result.inner_loss_history[3],
            result.inner_loss_history[5],
        )
        assert result.config_echo is pnp_cfg
        # snapshot shapes stay consistent with the object
        for snap in result.per_epoch_snapshots:
            assert snap.slices.shape == obj.slices.shape

    def test_deterministic_across_runs(self, problem):
        obj, probe, grid, data = problem
        pnp_cfg = PnpConfig(tau=1e-4, gamma=0.7, n_inner=2, n_outer=2)
        runs = [
            run_pnp(pnp_cfg, SolverConfig(rng_seed=16), grid, data,
                    flat_object_like(obj), probe, ConstantEditor(0.4))
            for _ in range(2)
        ]
        np.testing.assert_array_equal(
            runs[0].final_object.slices, runs[1].final_object.slices
        )
        assert runs[0].per_epoch_loss == runs[1].per_epoch_loss

    def test_editor_failure_aborts_by_default(self, problem):
        obj, probe, grid, data = problem
        pnp_cfg = PnpConfig(tau=1e-4, gamma=0.8, n_inner=1, n_outer=2)
        with pytest.raises(PnpEditError, match="epoch 0"):
            run_pnp(pnp_cfg, SolverConfig(rng_seed=17), grid, data,
                    flat_object_like(obj), probe, FailingEditor())

    def test_optional_editor_failure_warns_and_continues(self, problem):
        obj, probe, grid, data = problem
        pnp_cfg = PnpConfig(tau=1e-4, gamma=0.8, n_inner=1, n_outer=2,
                            editor_optional=True)
        with pytest.warns(UserWarning, match="editor failed"):
            result = run_pnp(pnp_cfg, SolverConfig(rng_seed=18), grid, data,
                             flat_object_like(obj), probe, FailingEditor())
        assert len(result.warnings) == 2
        assert len(result.per_epoch_loss) == 2

    def test_editor_disabled_epochs_pass_through_exactly(self, problem):
        # with editing disabled from the start, any editor behaves as the
        # identity passthrough, so the run must match the identity editor
        obj, probe, grid, data = problem
        pnp_cfg = PnpConfig(tau=1e-4, gamma=0.8, n_inner=2, n_outer=2,
                            edit_last_epoch=0)
        a = run_pnp(pnp_cfg, SolverConfig(rng_seed=19), grid, data,
                    flat_object_like(obj), probe, ConstantEditor(0.1))
        b = run_pnp(pnp_cfg, SolverConfig(rng_seed=19), grid, data,
                    flat_object_like(obj), probe, IdentityEditor())
        np.testing.assert_array_equal(
            a.final_object.slices, b.final_object.slices
        )

    def test_loss_length_invariant_enforced(self, problem):
        obj, probe, _, _ = problem
        with pytest.raises(ValueError, match="per_epoch_loss"):
            PnpResult(
                final_object=obj,
                final_probe=probe,
                per_epoch_loss=(0.1,),
                config_echo=PnpConfig(n_outer=3),
            )
