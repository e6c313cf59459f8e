"""Editor behaviors: notch filtering, mask fills, external protocol."""

import json
import sys
import textwrap

import numpy as np
import pytest

from ptyclean.core import EditRequest
from ptyclean.editors import (
    EditorOutputError,
    EditorProcessError,
    EditorShapeError,
    EditorSpec,
    EditorTimeoutError,
    ExternalEditor,
    IdentityEditor,
    MaskOracleEditor,
    SmoothDenoiseEditor,
    SpectralNotchEditor,
    build_editor,
    external_edit,
    in_loop_spectral_filter,
    mask_oracle_edit,
    smooth_denoise,
    spectral_notch,
)


def harmonic_bins(shape, period_y, period_x):
    """Scalar-loop oracle: centered-bin coordinates of all grid harmonics."""
    h, w = shape
    cy, cx = h // 2, w // 2
    bins = set()
    for k in range(-h, h + 1):
        for l in range(-w, w + 1):
            if k == 0 and l == 0:
                continue
            r = cy + round(h * k / period_y)
            c = cx + round(w * l / period_x)
            if 0 <= r < h and 0 <= c < w:
                bins.add((r, c))
    return bins


class TestSpectralNotch:
    def test_constant_image_unchanged(self):
        img = 0.7 * np.ones((32, 32))
        out = spectral_notch(img, 8, 8)
        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_pure_grid_sinusoid_removed(self):
        n, period = 64, 8
        y = np.arange(n)[:, np.newaxis]
        img = 0.3 + np.sin(2 * np.pi * y / period) * np.ones((1, n))
        out = spectral_notch(img, period, period)
        residual = out - 0.3
        assert np.max(np.abs(residual)) <= 1e-4 * 1.0

    def test_notched_bins_exactly_zero(self):
        rng = np.random.default_rng(61)
        img = rng.normal(size=(64, 64))
        period = 8
        out = spectral_notch(img, period, period, neighborhood=5)
        spectrum = np.fft.fftshift(np.fft.fft2(out))
        scale = np.max(np.abs(np.fft.fft2(img)))
        half = 2
        for (r, c) in harmonic_bins((64, 64), period, period):
            block = spectrum[max(0, r - half):r + half + 1,
                             max(0, c - half):c + half + 1]
            assert np.max(np.abs(block)) <= 1e-12 * scale

    def test_mean_preserved(self):
        rng = np.random.default_rng(62)
        img = rng.normal(size=(48, 48)) + 2.5
        out = spectral_notch(img, 6, 6)
        assert np.mean(out) == pytest.approx(np.mean(img), abs=1e-7)

    def test_idempotent(self):
        rng = np.random.default_rng(63)
        img = rng.normal(size=(64, 64))
        once = spectral_notch(img, 8, 8)
        twice = spectral_notch(once, 8, 8)
        np.testing.assert_allclose(twice, once, atol=1e-7)

    def test_result_is_real_and_finite(self):
        rng = np.random.default_rng(64)
        out = spectral_notch(rng.normal(size=(33, 31)), 7.5, 6.2)
        assert out.dtype.kind == "f"
        assert np.all(np.isfinite(out))

    def test_small_period_rejected(self):
        with pytest.raises(ValueError, match=">= 2"):
            spectral_notch(np.ones((16, 16)), 1.5, 8)

    def test_even_neighborhood_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            spectral_notch(np.ones((16, 16)), 8, 8, neighborhood=4)

    def test_neighborhood_covering_dc_rejected(self):
        # period 15 on 16 px puts the first harmonic 1 bin from DC
        with pytest.raises(ValueError, match="DC"):
            spectral_notch(np.ones((16, 16)), 15, 15, neighborhood=5)


class TestInLoopFilter:
    def slices(self, n=64):
        rng = np.random.default_rng(65)
        return np.exp(1j * rng.normal(size=(1, n, n)))

    def fired_iterations(self, cb, n_total):
        s = self.slices()
        return [
            i for i in range(1, n_total + 1)
            if cb(s, i, n_total) is not None
        ]

    def test_schedule_excludes_last_iteration(self):
        cb = in_loop_spectral_filter(100, 8, 8)
        fired = self.fired_iterations(cb, 1000)
        assert fired == list(range(100, 1000, 100))
        assert len(fired) == 9

    def test_period_longer_than_run_never_fires(self):
        cb = in_loop_spectral_filter(500, 8, 8)
        assert self.fired_iterations(cb, 400) == []

    def test_output_shape_and_magnitude_preserved(self):
        cb = in_loop_spectral_filter(1, 8, 8)
        s = self.slices()
        out = cb(s, 1, 10)
        assert out.shape == s.shape
        np.testing.assert_allclose(np.abs(out), np.abs(s), atol=1e-12)

    def test_bad_interval_rejected(self):
        with pytest.raises(ValueError, match="every_k"):
            in_loop_spectral_filter(0, 8, 8)


class TestMaskOracle:
    def test_empty_mask_is_identity(self):
        rng = np.random.default_rng(71)
        img = rng.normal(size=(16, 16))
        out = mask_oracle_edit(img, np.zeros((16, 16)))
        np.testing.assert_array_equal(out, img)

    def test_constant_image_unchanged_by_median_fill(self):
        img = 1.3 * np.ones((16, 16))
        mask = np.zeros((16, 16))
        mask[4:8, 4:8] = 1
        out = mask_oracle_edit(img, mask)
        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_single_outlier_replaced_by_background(self):
        img = 2.0 * np.ones((16, 16))
        img[8, 8] = 50.0
        mask = np.zeros((16, 16))
        mask[8, 8] = 1
        out = mask_oracle_edit(img, mask)
        assert out[8, 8] == pytest.approx(2.0)

    def test_unmasked_pixels_bit_identical(self):
        rng = np.random.default_rng(72)
        img = rng.normal(size=(20, 20))
        mask = rng.uniform(size=(20, 20)) < 0.2
        out = mask_oracle_edit(img, mask)
        np.testing.assert_array_equal(out[~mask], img[~mask])

    def test_constant_fill(self):
        img = np.arange(16.0).reshape(4, 4)
        mask = np.zeros((4, 4))
        mask[0, 0] = 1
        out = mask_oracle_edit(img, mask, fill="constant", fill_value=-7.0)
        assert out[0, 0] == -7.0

    def test_large_hole_falls_back_to_global_median(self):
        rng = np.random.default_rng(73)
        img = rng.normal(size=(32, 32))
        mask = np.zeros((32, 32))
        mask[6:26, 6:26] = 1  # center pixels see no unmasked neighbors
        out = mask_oracle_edit(img, mask, window=9)
        assert np.all(np.isfinite(out))
        assert out[16, 16] == pytest.approx(np.median(img[mask == 0]))

    def test_all_ones_mask_with_median_rejected(self):
        with pytest.raises(ValueError, match="unmasked"):
            mask_oracle_edit(np.ones((8, 8)), np.ones((8, 8)))

    def test_all_ones_mask_with_constant_ok(self):
        out = mask_oracle_edit(
            np.ones((8, 8)), np.ones((8, 8)), fill="constant", fill_value=3.0
        )
        np.testing.assert_array_equal(out, 3.0 * np.ones((8, 8)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mask shape"):
            mask_oracle_edit(np.ones((8, 8)), np.ones((4, 4)))


class TestSmoothDenoise:
    def test_zero_strength_is_identity(self):
        rng = np.random.default_rng(81)
        img = rng.normal(size=(16, 16))
        np.testing.assert_array_equal(smooth_denoise(img, 0.0), img)

    def test_reduces_noise_on_piecewise_constant(self):
        rng = np.random.default_rng(82)
        clean = np.zeros((32, 32))
        clean[:, 16:] = 1.0
        noisy = clean + 0.1 * rng.normal(size=(32, 32))
        smoothed = smooth_denoise(noisy, strength=0.8)
        assert np.mean((smoothed - clean) ** 2) < np.mean((noisy - clean) ** 2)

    def test_output_finite_and_same_shape(self):
        rng = np.random.default_rng(83)
        out = smooth_denoise(rng.normal(size=(17, 23)), 0.5)
        assert out.shape == (17, 23)
        assert np.all(np.isfinite(out))

    def test_bad_strength_rejected(self):
        with pytest.raises(ValueError, match="strength"):
            smooth_denoise(np.ones((4, 4)), 1.5)


def write_stub(tmp_path, body):
    script = tmp_path / "stub_editor.py"
    script.write_text(
        "import json, os, shutil, sys\n"
        "wd = sys.argv[1]\n"
        + textwrap.dedent(body)
    )
    return [sys.executable, str(script)]


class TestExternalEdit:
    def request(self):
        return EditRequest(prompt="dot grid", seed=3)

    def test_copy_stub_is_identity(self, tmp_path):
        cmd = write_stub(
            tmp_path,
            "shutil.copy(os.path.join(wd, 'input.npy'),"
            " os.path.join(wd, 'output.npy'))\n",
        )
        rng = np.random.default_rng(91)
        img = rng.uniform(0, 1, size=(12, 10))
        out = external_edit(img, cmd, self.request())
        np.testing.assert_array_equal(
            out, img.astype(np.float32).astype(np.float64)
        )

    def test_request_json_follows_protocol(self, tmp_path):
        cmd = write_stub(
            tmp_path,
            """
            req = json.load(open(os.path.join(wd, 'request.json')))
            keys = {'prompt', 'guidance_scale', 'inference_steps', 'seed',
                    'height', 'width', 'mode'}
            assert set(req) == keys, req
            assert req['mode'] == 'remove'
            assert req['prompt'] == 'dot grid'
            assert req['seed'] == 3
            assert req['height'] == 12 and req['width'] == 10
            shutil.copy(os.path.join(wd, 'input.npy'),
                        os.path.join(wd, 'output.npy'))
            """,
        )
        img = np.zeros((12, 10))
        external_edit(img, cmd, self.request())  # stub asserts internally

    def test_nonzero_exit_raises_process_error(self, tmp_path):
        cmd = write_stub(
            tmp_path,
            "print('broken on purpose')\nsys.exit(3)\n",
        )
        with pytest.raises(EditorProcessError, match="editor process failed"):
            external_edit(np.zeros((4, 4)), cmd, self.request())
        try:
            external_edit(np.zeros((4, 4)), cmd, self.request())
        except EditorProcessError as exc:
            assert "broken on purpose" in str(exc)

    def test_missing_output_raises_output_error(self, tmp_path):
        cmd = write_stub(tmp_path, "pass\n")
        with pytest.raises(EditorOutputError, match="output.npy"):
            external_edit(np.zeros((4, 4)), cmd, self.request())

    def test_shape_mismatch_raises_shape_error(self, tmp_path):
        cmd = write_stub(
            tmp_path,
            """
            import numpy as np
            np.save(os.path.join(wd, 'output.npy'),
                    np.zeros((2, 2), dtype=np.float32))
            """,
        )
        with pytest.raises(EditorShapeError, match="shape"):
            external_edit(np.zeros((4, 4)), cmd, self.request())

    def test_out_of_range_output_clamped_with_warning(self, tmp_path):
        cmd = write_stub(
            tmp_path,
            """
            import numpy as np
            inp = np.load(os.path.join(wd, 'input.npy'))
            np.save(os.path.join(wd, 'output.npy'),
                    np.full(inp.shape, 2.0, dtype=np.float32))
            """,
        )
        with pytest.warns(UserWarning, match="clamping"):
            out = external_edit(np.zeros((4, 4)), cmd, self.request())
        np.testing.assert_array_equal(out, np.ones((4, 4)))

    def test_timeout_raises_timeout_error(self, tmp_path):
        cmd = write_stub(tmp_path, "import time\ntime.sleep(30)\n")
        with pytest.raises(EditorTimeoutError, match="timed out"):
            external_edit(np.zeros((4, 4)), cmd, self.request(), timeout=0.5)

    def test_unlaunchable_command(self):
        with pytest.raises(EditorProcessError, match="failed to start"):
            external_edit(
                np.zeros((4, 4)), ["/nonexistent/editor"], self.request()
            )


class TestEditorSpec:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown editor kind"):
            EditorSpec(kind="sharpen")

    def test_external_requires_command(self):
        with pytest.raises(ValueError, match="command"):
            EditorSpec(kind="external")

    @pytest.mark.parametrize(
        "kind,params,cls",
        [
            ("identity", {}, IdentityEditor),
            ("spectral_notch", {"grid_period_y": 8, "grid_period_x": 8},
             SpectralNotchEditor),
            ("smooth_denoise", {"strength": 0.3}, SmoothDenoiseEditor),
            ("mask_oracle", {"mask": np.zeros((4, 4))}, MaskOracleEditor),
            ("external", {"command": ["true"]}, ExternalEditor),
        ],
    )
    def test_build_editor_dispatch(self, kind, params, cls):
        editor = build_editor(EditorSpec(kind=kind, parameters=params))
        assert isinstance(editor, cls)

    def test_identity_editor_is_exact(self):
        rng = np.random.default_rng(95)
        img = rng.normal(size=(8, 8))
        out = IdentityEditor().edit(img, EditRequest())
        np.testing.assert_array_equal(out, img)
