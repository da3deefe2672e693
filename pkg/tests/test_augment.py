"""Tests for traditional augmentation and the eight FAS-Aug operators."""

from pathlib import Path

import numpy as np
import pytest

from padkit.augment import (
    FORCE_SPOOF,
    OPERATOR_BY_KIND,
    OPERATORS,
    PRESERVE,
    AugParams,
    AugPolicy,
    apply_fas_aug,
    bn_halftone,
    hand_tremble,
    load_params,
    low_resolution,
    moire_pattern,
    per_sample_rng,
    save_params,
    sfc_halftone,
    specular_reflection,
    traditional_augment,
)
from padkit.data import Sample
from padkit.errors import ConfigError
from padkit.metrics import LIVE, SPOOF

GOLDEN_PATH = Path(__file__).parent / "golden" / "fas_aug_golden.npz"

PARAMS = AugParams()


def random_image(seed: int, size: int = 24) -> np.ndarray:
    return np.random.default_rng(seed).random((size, size, 3)).astype(np.float32)


class TestOperatorTable:
    def test_eight_operators_with_fixed_kinds(self):
        assert len(OPERATORS) == 8
        assert [op.kind for op in OPERATORS] == [
            "hand_tremble",
            "low_resolution",
            "color_diversity",
            "color_distortion",
            "sfc_halftone",
            "bn_halftone",
            "specular_reflection",
            "moire_pattern",
        ]

    def test_label_effect_partition(self):
        preserve = {op.kind for op in OPERATORS if op.label_effect == PRESERVE}
        force = {op.kind for op in OPERATORS if op.label_effect == FORCE_SPOOF}
        assert preserve == {"hand_tremble", "low_resolution", "color_diversity"}
        assert force == {
            "color_distortion",
            "sfc_halftone",
            "bn_halftone",
            "specular_reflection",
            "moire_pattern",
        }


class TestRangeAndDeterminism:
    @pytest.mark.parametrize("op", OPERATORS, ids=lambda op: op.kind)
    def test_output_stays_in_unit_range(self, op):
        for seed, image in ((0, random_image(0)), (1, np.zeros((16, 16, 3), np.float32)),
                            (2, np.ones((16, 16, 3), np.float32))):
            out = op.fn(image, PARAMS, np.random.default_rng(seed))
            assert out.shape == image.shape
            assert out.dtype == image.dtype
            assert out.min() >= 0.0 and out.max() <= 1.0

    @pytest.mark.parametrize("op", OPERATORS, ids=lambda op: op.kind)
    def test_fixed_seed_repeats_bitwise(self, op):
        image = random_image(3)
        first = op.fn(image, PARAMS, np.random.default_rng(42))
        second = op.fn(image, PARAMS, np.random.default_rng(42))
        np.testing.assert_array_equal(first, second)

    def test_different_seeds_differ(self):
        image = random_image(4)
        a = hand_tremble(image, PARAMS, np.random.default_rng(0))
        b = hand_tremble(image, PARAMS, np.random.default_rng(1))
        assert not np.array_equal(a, b)


class TestPhotographyOperators:
    """hand_tremble, low_resolution, color_diversity (+ color_distortion)."""

    @pytest.mark.parametrize(
        "kind", ["hand_tremble", "low_resolution", "color_diversity", "color_distortion"]
    )
    def test_constant_image_stays_spatially_constant(self, kind):
        image = np.full((20, 20, 3), 0.4, dtype=np.float32)
        out = OPERATOR_BY_KIND[kind].fn(image, PARAMS, np.random.default_rng(9))
        assert np.ptp(out.reshape(-1, 3), axis=0).max() < 1e-5

    def test_hand_tremble_preserves_mean_brightness(self):
        image = random_image(5, size=40)
        out = hand_tremble(image, PARAMS, np.random.default_rng(6))
        assert abs(out.mean() - image.mean()) < 0.01 * image.mean()

    def test_low_resolution_removes_detail(self):
        image = random_image(6, size=40)
        out = low_resolution(image, PARAMS, np.random.default_rng(7))
        # pixel-to-pixel jumps shrink after the down/up round trip
        def roughness(arr):
            return np.abs(np.diff(arr, axis=0)).mean() + np.abs(np.diff(arr, axis=1)).mean()
        assert roughness(out) < roughness(image)

    def test_color_diversity_is_per_channel_gain(self):
        image = random_image(7)
        out = OPERATOR_BY_KIND["color_diversity"].fn(image, PARAMS, np.random.default_rng(8))
        # away from clipping, each channel is an exact scalar multiple
        for ch in range(3):
            mask = (image[:, :, ch] > 0.05) & (out[:, :, ch] < 0.999)
            ratios = out[:, :, ch][mask] / image[:, :, ch][mask]
            assert ratios.std() < 1e-5
            assert 0.8 - 1e-5 <= ratios.mean() <= 1.2 + 1e-5


class TestSpoofArtifactOperators:
    def test_color_distortion_desaturates(self):
        image = random_image(8)
        out = OPERATOR_BY_KIND["color_distortion"].fn(image, PARAMS, np.random.default_rng(10))
        def saturation(arr):
            return (arr.max(axis=-1) - arr.min(axis=-1)).mean()
        assert saturation(out) < saturation(image)

    def test_sfc_halftone_is_binary_per_channel(self):
        out = sfc_halftone(random_image(9, size=32), PARAMS, np.random.default_rng(11))
        assert set(np.unique(out)) <= {0.0, 1.0}

    def test_bn_halftone_is_binary_and_tone_preserving(self):
        image = random_image(10, size=32)
        out = bn_halftone(image, PARAMS, np.random.default_rng(12))
        assert set(np.unique(out)) <= {0.0, 1.0}
        # error diffusion conserves average tone up to boundary leakage
        assert abs(out.mean() - image.mean()) < 0.05

    def test_specular_reflection_only_brightens(self):
        image = random_image(11)
        out = specular_reflection(image, PARAMS, np.random.default_rng(13))
        assert (out >= image - 1e-7).all()
        assert (out > image + 0.05).any()

    def test_moire_modulation_is_bounded_by_contrast(self):
        image = random_image(12, size=32)
        out = moire_pattern(image, PARAMS, np.random.default_rng(14))
        limit = PARAMS.moire_contrast[1]
        assert (np.abs(out - image) <= limit * image + 1e-6).all()
        assert not np.array_equal(out, image)


class TestApplyFasAug:
    def live_sample(self, seed=0):
        return Sample(label=LIVE, image=random_image(seed))

    def test_probability_zero_passes_through_bitwise(self):
        sample = self.live_sample()
        policy = AugPolicy(fas_aug_probability=0.0)
        out = apply_fas_aug(sample, policy, np.random.default_rng(0))
        assert out.label == sample.label
        np.testing.assert_array_equal(out.image, sample.image)

    def test_force_spoof_rewrites_label_and_tag(self):
        policy = AugPolicy(fas_aug_probability=1.0)
        seen = {}
        for seed in range(200):
            rng = np.random.default_rng(seed)
            out = apply_fas_aug(self.live_sample(), policy, rng)
            seen.setdefault(out.attack_type if out.label == SPOOF else "live", 0)
            if out.label == SPOOF:
                assert out.attack_type in {
                    op.kind for op in OPERATORS if op.label_effect == FORCE_SPOOF
                }
            else:
                assert out.attack_type == "Live"
        assert len(seen) >= 5  # both routes and several operators exercised

    def test_spoof_samples_stay_spoof(self):
        policy = AugPolicy(fas_aug_probability=1.0)
        for seed in range(60):
            sample = Sample(label=SPOOF, attack_type="print", image=random_image(seed))
            out = apply_fas_aug(sample, policy, np.random.default_rng(seed))
            assert out.label == SPOOF

    def test_firing_rate_and_uniform_choice(self):
        policy = AugPolicy(fas_aug_probability=0.2)
        fired = 0
        per_op = {op.kind: 0 for op in OPERATORS}
        draws = 4000
        for i in range(draws):
            rng = per_sample_rng(policy.seed, 1, i)
            out = apply_fas_aug(self.live_sample(i % 5), policy, rng)
            changed = (out.label != LIVE) or not np.array_equal(out.image, self.live_sample(i % 5).image)
            if changed:
                fired += 1
        assert fired / draws == pytest.approx(0.2, abs=0.02)

    def test_counter_based_rng_reproducible(self):
        policy = AugPolicy(fas_aug_probability=1.0)
        sample = self.live_sample(3)
        a = apply_fas_aug(sample, policy, per_sample_rng(7, 2, 11))
        b = apply_fas_aug(sample, policy, per_sample_rng(7, 2, 11))
        np.testing.assert_array_equal(a.image, b.image)
        assert a.label == b.label and a.attack_type == b.attack_type
        c = apply_fas_aug(sample, policy, per_sample_rng(7, 2, 12))
        assert (a.label != c.label) or not np.array_equal(a.image, c.image)

    def test_policy_validation(self):
        with pytest.raises(ConfigError):
            AugPolicy(fas_aug_probability=1.5)
        with pytest.raises(ConfigError):
            AugPolicy(rotation_degrees=-3.0)


class TestTraditionalAugment:
    def test_identity_at_zero_rotation_and_unit_jitter(self):
        image = random_image(13)
        policy = AugPolicy(rotation_degrees=0.0, jitter_gain=(1.0, 1.0))
        out = traditional_augment(image, policy, np.random.default_rng(0))
        np.testing.assert_array_equal(out, image)

    def test_deterministic_and_in_range(self):
        image = random_image(14)
        policy = AugPolicy()
        a = traditional_augment(image, policy, np.random.default_rng(5))
        b = traditional_augment(image, policy, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0
        assert not np.array_equal(a, image)


class TestParamsFile:
    def test_round_trip(self, tmp_path):
        params = AugParams(tremble_length=(5, 7), moire_contrast=(0.02, 0.1))
        path = tmp_path / "aug.params"
        save_params(path, params)
        assert load_params(path) == params

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "aug.params"
        path.write_text("sharpen_amount 0.5\n")
        with pytest.raises(ConfigError, match="sharpen_amount"):
            load_params(path)

    def test_missing_value_rejected(self, tmp_path):
        path = tmp_path / "aug.params"
        path.write_text("moire_contrast\n")
        with pytest.raises(ConfigError):
            load_params(path)


@pytest.fixture(scope="module")
def goldens():
    assert GOLDEN_PATH.exists(), "golden archive missing; run tests/make_goldens.py"
    with np.load(GOLDEN_PATH) as data:
        return {k: data[k] for k in data.files}


class TestGoldens:
    """Outputs frozen once via tests/make_goldens.py; inputs stored alongside."""

    @pytest.mark.parametrize("index,kind", list(enumerate(op.kind for op in OPERATORS)))
    def test_operator_matches_frozen_output(self, goldens, index, kind):
        out = OPERATOR_BY_KIND[kind].fn(
            goldens["fixture"], AugParams(), np.random.default_rng(100 + index)
        )
        np.testing.assert_array_equal(out, goldens[kind])

    def test_traditional_matches_frozen_output(self, goldens):
        out = traditional_augment(goldens["fixture"], AugPolicy(), np.random.default_rng(200))
        np.testing.assert_array_equal(out, goldens["traditional"])
