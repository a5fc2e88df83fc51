import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histoadv import (
    SsimParams,
    asr_per_step,
    gaussian_window,
    l2_distance,
    linf_distance,
    ssim,
    ssim_summary,
)
from histoadv.attack import AttackResult, StepRecord


def reference_ssim(x, y, window_size=11, sigma=1.5, k1=0.01, k2=0.03, L=1.0):
    """Brute-force sliding-window SSIM: explicit loops over window positions.

    Deliberately unoptimized and structured differently from the library
    implementation (2-D window weights, centered moments) so it can serve
    as an independent oracle.
    """
    offsets = np.arange(window_size) - (window_size - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    w = w / w.sum()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    channel_means = []
    for c in range(x.shape[0]):
        vals = []
        h, width = x.shape[1], x.shape[2]
        for i in range(h - window_size + 1):
            for j in range(width - window_size + 1):
                px = x[c, i : i + window_size, j : j + window_size]
                py = y[c, i : i + window_size, j : j + window_size]
                mx = float((w * px).sum())
                my = float((w * py).sum())
                vx = float((w * (px - mx) ** 2).sum())
                vy = float((w * (py - my) ** 2).sum())
                cxy = float((w * (px - mx) * (py - my)).sum())
                vals.append(
                    ((2 * mx * my + c1) * (2 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2))
                )
        channel_means.append(np.mean(vals))
    return float(np.mean(channel_means))


def make_result(success_step, max_steps, final_ssim=0.95):
    trace_len = max_steps if success_step is None else success_step
    trace = [
        StepRecord(step=i + 1, loss=0.0, predicted_label="x", target_probability=0.5, ssim_to_original=final_ssim)
        for i in range(trace_len)
    ]
    dummy = np.zeros((3, 8, 8))
    return AttackResult(
        original=dummy,
        adversarial=dummy,
        perturbation=dummy,
        trace=trace,
        success=success_step is not None,
        success_step=success_step,
        final_ssim=final_ssim,
    )


class TestSsim:
    def test_identical_images_give_exactly_one(self, rng):
        for _ in range(5):
            x = rng.uniform(0, 1, size=(3, 24, 24))
            assert abs(ssim(x, x) - 1.0) < 1e-9

    def test_constant_images_match_closed_form(self):
        a, b = 0.0, 1.0
        x = np.full((3, 32, 32), a)
        y = np.full((3, 32, 32), b)
        c1 = (0.01 * 1.0) ** 2
        expected = (2 * a * b + c1) / (a**2 + b**2 + c1)
        assert abs(ssim(x, y) - expected) < 1e-9
        assert abs(expected - 1e-4 / (1 + 1e-4)) < 1e-12

    def test_matches_brute_force_reference_on_random_pairs(self, rng):
        for _ in range(20):
            x = rng.uniform(0, 1, size=(3, 32, 32))
            y = np.clip(x + rng.normal(scale=0.05, size=x.shape), 0, 1)
            assert abs(ssim(x, y) - reference_ssim(x, y)) < 1e-6

    def test_matches_reference_with_nondefault_params(self, rng):
        p = SsimParams(window_size=7, gaussian_sigma=2.0, k1=0.02, k2=0.05, dynamic_range=0.5)
        x = rng.uniform(0, 0.5, size=(3, 20, 20))
        y = rng.uniform(0, 0.5, size=(3, 20, 20))
        expected = reference_ssim(x, y, window_size=7, sigma=2.0, k1=0.02, k2=0.05, L=0.5)
        assert abs(ssim(x, y, p) - expected) < 1e-6

    def test_symmetry(self, rng):
        for _ in range(10):
            x = rng.uniform(0, 1, size=(3, 16, 16))
            y = rng.uniform(0, 1, size=(3, 16, 16))
            assert abs(ssim(x, y) - ssim(y, x)) < 1e-9

    def test_shift_sensitivity_monotone(self, rng):
        x = rng.uniform(0.1, 0.85, size=(3, 32, 32))
        values = [ssim(x, np.clip(x + c, 0, 1)) for c in (0.01, 0.05, 0.1)]
        assert values[0] > values[1] > values[2]

    def test_value_in_range(self, rng):
        for _ in range(10):
            x = rng.uniform(0, 1, size=(3, 16, 16))
            y = rng.uniform(0, 1, size=(3, 16, 16))
            assert -1.0 <= ssim(x, y) <= 1.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((3, 16, 16)), np.zeros((3, 16, 17)))

    def test_window_larger_than_image_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)), SsimParams(window_size=11))

    def test_even_or_tiny_window_rejected(self):
        with pytest.raises(ValueError):
            SsimParams(window_size=10)
        with pytest.raises(ValueError):
            SsimParams(window_size=1)

    def test_fitted_to_shrinks_window(self):
        p = SsimParams(window_size=11).fitted_to(8, 9)
        assert p.window_size == 7
        assert SsimParams(window_size=5).fitted_to(224, 224).window_size == 5


class TestGaussianWindow:
    def test_weights_sum_to_one(self):
        for size, sigma in [(3, 0.5), (11, 1.5), (21, 4.0)]:
            assert abs(gaussian_window(size, sigma).sum() - 1.0) < 1e-9

    def test_symmetric_and_peaked_at_center(self):
        w = gaussian_window(11, 1.5)
        assert np.allclose(w, w[::-1])
        assert w.argmax() == 5


class TestDistances:
    def test_identical_tensors_zero(self):
        x = np.ones((3, 8, 8)) * 0.3
        assert linf_distance(x, x) == 0.0
        assert l2_distance(x, x) == 0.0

    def test_single_differing_pixel(self):
        x = np.zeros((3, 8, 8))
        y = x.copy()
        y[1, 2, 3] = 0.25
        assert linf_distance(x, y) == pytest.approx(0.25, abs=1e-12)
        assert l2_distance(x, y) == pytest.approx(0.25, abs=1e-12)

    def test_matches_elementwise_oracle(self, rng):
        x = rng.uniform(0, 1, size=(3, 12, 12))
        y = rng.uniform(0, 1, size=(3, 12, 12))
        linf_expected = max(abs(float(a) - float(b)) for a, b in zip(x.flat, y.flat))
        l2_expected = sum((float(a) - float(b)) ** 2 for a, b in zip(x.flat, y.flat)) ** 0.5
        assert abs(linf_distance(x, y) - linf_expected) < 1e-9
        assert abs(l2_distance(x, y) - l2_expected) < 1e-9

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            linf_distance(np.zeros((3, 8, 8)), np.zeros((3, 9, 8)))


class TestAsrPerStep:
    def test_hand_counted_micro_case(self):
        results = [make_result(1, 3), make_result(2, 3), make_result(2, 3), make_result(None, 3)]
        curve = asr_per_step(results, max_steps=3)
        assert np.allclose(curve.per_step, [0.25, 0.75, 0.75])
        assert curve.n_attacks == 4

    def test_all_successes_reach_one(self):
        results = [make_result(s, 10) for s in (1, 3, 10, 7)]
        curve = asr_per_step(results, max_steps=10)
        assert curve.per_step[-1] == 1.0

    def test_no_successes_all_zero(self):
        results = [make_result(None, 5) for _ in range(3)]
        curve = asr_per_step(results, max_steps=5)
        assert np.all(curve.per_step == 0.0)

    def test_monotone_on_random_result_sets(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 30))
            max_steps = int(rng.integers(1, 15))
            steps = [
                None if rng.random() < 0.3 else int(rng.integers(1, max_steps + 1))
                for _ in range(n)
            ]
            curve = asr_per_step([make_result(s, max_steps) for s in steps], max_steps)
            assert np.all(np.diff(curve.per_step) >= -1e-12)
            assert np.all((curve.per_step >= 0) & (curve.per_step <= 1))
            plain_fraction = sum(s is not None for s in steps) / n
            assert curve.per_step[-1] == pytest.approx(plain_fraction)

    def test_per_class_curves(self):
        results = [make_result(1, 2), make_result(None, 2), make_result(2, 2)]
        curve = asr_per_step(results, 2, true_labels=["a", "a", "b"])
        assert np.allclose(curve.per_class["a"], [0.5, 0.5])
        assert np.allclose(curve.per_class["b"], [0.0, 1.0])
        assert curve.n_attacks_per_class == {"a": 2, "b": 1}

    def test_empty_results_rejected(self):
        with pytest.raises(ValueError):
            asr_per_step([], 5)

    def test_trace_longer_than_max_steps_rejected(self):
        with pytest.raises(ValueError):
            asr_per_step([make_result(None, 7)], max_steps=3)


class TestSsimSummary:
    def test_fraction_and_min(self):
        results = [make_result(1, 1, final_ssim=v) for v in (0.95, 0.91, 0.89)]
        summary = ssim_summary(results)
        assert summary.fraction_at_least == pytest.approx(2 / 3)
        assert summary.min == pytest.approx(0.89)
        assert summary.max == pytest.approx(0.95)

    def test_all_equal(self):
        results = [make_result(1, 1, final_ssim=0.93) for _ in range(4)]
        summary = ssim_summary(results)
        assert summary.mean == summary.min == summary.max == pytest.approx(0.93)

    def test_custom_threshold(self):
        results = [make_result(1, 1, final_ssim=v) for v in (0.95, 0.91)]
        assert ssim_summary(results, threshold=0.94).fraction_at_least == pytest.approx(0.5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ssim_summary([])


@settings(max_examples=30, deadline=None)
@given(
    data=st.lists(st.floats(min_value=0.0, max_value=1.0, allow_nan=False), min_size=121, max_size=121),
    shift=st.floats(min_value=-0.2, max_value=0.2, allow_nan=False),
)
def test_ssim_symmetry_property(data, shift):
    x = np.tile(np.asarray(data).reshape(1, 11, 11), (3, 1, 1))
    y = np.clip(x + shift, 0.0, 1.0)
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-9)
