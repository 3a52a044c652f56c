import numpy as np
import pytest

from latentmark.keyed import (
    BitDetectionResult,
    DetectionPolicy,
    GSKey,
    PRCKey,
    SEALKey,
    VideoShieldKey,
    binomial_tail_pvalue,
    gs_detect,
    gs_embed,
    gs_generate_key,
    hyperplanes_from_salt,
    prc_detect,
    prc_embed,
    prc_generate_key,
    seal_detect,
    seal_embed,
    seal_generate_key,
    seal_transplant,
    semantic_vector,
    simhash_bits,
    videoshield_detect,
    videoshield_embed,
    videoshield_generate_key,
)
from latentmark.tensor import SeededRng, derive_key, gaussian_latent

KEY = bytes(range(32))
SHAPE = (4, 32, 32)
PVAL = DetectionPolicy("p_value", 0.01)


class TestBinomialTail:
    def test_trivial_values(self):
        assert binomial_tail_pvalue(1, 1) == pytest.approx(0.5, rel=1e-12)
        assert binomial_tail_pvalue(4, 4) == pytest.approx(0.0625, rel=1e-12)
        assert binomial_tail_pvalue(10, 0) == 1.0

    def test_against_mpmath_oracle(self):
        # arbitrary-precision summation oracle
        import mpmath

        def oracle(n, x, p="0.5"):
            p = mpmath.mpf(p)
            return float(
                mpmath.fsum(mpmath.binomial(n, i) * p**i * (1 - p) ** (n - i) for i in range(x, n + 1))
            )

        for n, x in [(256, 160), (256, 128), (1024, 600), (1024, 1024), (7, 3), (100, 99)]:
            want = oracle(n, x)
            got = binomial_tail_pvalue(n, x)
            assert abs(got - want) / want < 1e-9
        for n, x, p in [(16, 12, "0.1"), (200, 5, "0.01"), (64, 64, "0.9")]:
            want = oracle(n, x, p)
            got = binomial_tail_pvalue(n, x, float(mpmath.mpf(p)))
            assert abs(got - want) / want < 1e-9

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            binomial_tail_pvalue(4, 5)
        with pytest.raises(ValueError):
            binomial_tail_pvalue(4, -1)

    def test_large_n_runs(self):
        p = binomial_tail_pvalue(10**6, 500_000)
        assert 0.49 < p < 0.51


@pytest.fixture(scope="module")
def gs_key():
    return gs_generate_key(derive_key(KEY, "gs"), SHAPE, message_bits=256, replication=(1, 4, 4))


class TestGaussianShading:
    def test_sign_encodes_carrier_exactly(self, gs_key):
        from latentmark.keyed import _cipher_bits, _replicate_bits

        lat = gs_embed(gs_key, sample_id=5)
        n = lat.size
        s = (_replicate_bits(np.array(gs_key.message), SHAPE, gs_key.replication).ravel()
             ^ _cipher_bits(gs_key.stream_key, 5, n))
        assert np.array_equal((lat.ravel() > 0).astype(np.uint8), s)

    def test_marginal_standard_normal(self, gs_key):
        # KS oracle at alpha=0.01; pool 16 samples for n=65536
        from scipy.stats import kstest

        pooled = np.concatenate([gs_embed(gs_key, i).ravel() for i in range(16)])
        stat = kstest(pooled, "norm").statistic
        assert stat < 1.628 / np.sqrt(pooled.size)

    def test_determinism(self, gs_key):
        assert np.array_equal(gs_embed(gs_key, 9), gs_embed(gs_key, 9))
        assert not np.array_equal(gs_embed(gs_key, 9), gs_embed(gs_key, 10))

    def test_exact_inversion_recovery(self, gs_key):
        lat = gs_embed(gs_key, 3)
        result = gs_detect(gs_key, lat, PVAL, sample_id=3)
        assert result.bit_accuracy == 1.0
        assert result.p_value == pytest.approx(2.0**-256, rel=1e-9)
        assert result.is_watermarked

    def test_small_key_analytic_pvalue(self):
        key = gs_generate_key(derive_key(KEY, "gs4"), (4, 32, 32), message_bits=4, replication=(4, 16, 16))
        lat = gs_embed(key, 0)
        result = gs_detect(key, lat, PVAL, sample_id=0)
        assert result.p_value == pytest.approx(1 / 16, rel=1e-12)

    def test_null_accuracy_near_half(self, gs_key):
        # binomial 3-sigma: 0.5 +- 3*0.5/sqrt(256) = +-0.094
        null = gaussian_latent(SeededRng(KEY, 777), SHAPE)
        result = gs_detect(gs_key, null, PVAL, sample_id=777)
        assert abs(result.bit_accuracy - 0.5) <= 0.094
        assert not result.is_watermarked

    def test_key_json_round_trip(self, gs_key):
        again = GSKey.from_json(gs_key.to_json())
        assert again == gs_key

    def test_replication_must_divide(self):
        with pytest.raises(ValueError):
            gs_generate_key(KEY, (4, 32, 32), message_bits=100, replication=(3, 4, 4))


@pytest.fixture(scope="module")
def prc_key():
    return prc_generate_key(derive_key(KEY, "prc"), n=4096, r=512, t=3)


class TestPRC:
    def test_staircase_form(self, prc_key):
        checks = prc_key.checks
        assert np.array_equal(checks[:, -1], np.arange(4096 - 512, 4096))
        assert np.all(checks[:, :-1] < checks[:, -1:])
        rows_sorted = np.sort(checks, axis=1)
        assert np.array_equal(rows_sorted, checks)
        for row in checks:
            assert len(set(row.tolist())) == len(row)

    def test_exact_inversion_all_checks_pass(self, prc_key):
        lat = prc_embed(prc_key, 4, SHAPE)
        result = prc_detect(prc_key, lat, alpha=0.01)
        assert result.bit_accuracy == 1.0
        assert result.p_value == pytest.approx(2.0**-512, rel=1e-6)
        assert result.is_watermarked

    def test_marginal_standard_normal(self, prc_key):
        from scipy.stats import kstest

        pooled = np.concatenate([prc_embed(prc_key, i, SHAPE).ravel() for i in range(4)])
        assert kstest(pooled, "norm").statistic < 1.628 / np.sqrt(pooled.size)

    def test_null_satisfied_count(self, prc_key):
        null = gaussian_latent(SeededRng(KEY, 888), SHAPE)
        result = prc_detect(prc_key, null, alpha=0.01)
        x = result.bit_accuracy * 512
        assert abs(x - 256) <= 34  # 3 sigma of Binomial(512, 1/2)
        assert not result.is_watermarked

    def test_ten_percent_flip_matches_product_formula(self, prc_key):
        # independent-flip oracle: satisfaction = 0.5 + 0.5*(1-2q)^t
        expected = 0.5 + 0.5 * (1 - 0.2) ** 3
        rates = []
        for trial in range(20):
            lat = prc_embed(prc_key, 100 + trial, SHAPE).ravel()
            rng = SeededRng(derive_key(KEY, "flip"), trial)
            order = np.argsort(rng.uniforms(lat.size))
            flip = order[: lat.size // 10]
            lat[flip] *= -1.0
            rates.append(prc_detect(prc_key, lat.reshape(SHAPE), 0.01).bit_accuracy)
        assert abs(np.mean(rates) - expected) < 0.06

    def test_solvability_across_parameters(self):
        for n, r, t in [(64, 30, 3), (64, 32, 2), (128, 20, 5), (4096, 512, 3)]:
            key = prc_generate_key(derive_key(KEY, "prc", n, r, t), n=n, r=r, t=t)
            signs = np.where(prc_embed(key, 0, (n,)) >= 0, 1.0, -1.0)
            assert np.all(np.prod(signs[key.checks], axis=1) > 0)

    def test_infeasible_parameters(self):
        with pytest.raises(ValueError):
            prc_generate_key(KEY, n=64, r=63, t=3)
        with pytest.raises(ValueError):
            prc_generate_key(KEY, n=64, r=40, t=3)  # r > n/2

    def test_key_json_round_trip(self, prc_key):
        again = PRCKey.from_json(prc_key.to_json())
        assert np.array_equal(again.checks, prc_key.checks)


@pytest.fixture(scope="module")
def seal_key():
    return seal_generate_key(derive_key(KEY, "seal"), SHAPE, calibration_trials=200)


def random_pixel_media(stream, shape=(3, 64, 64)):
    vals = SeededRng(derive_key(KEY, "media"), stream).uniforms(int(np.prod(shape)))
    return (vals * 255.0).reshape(shape)


class TestSEAL:
    def test_exact_round_trip_all_patches(self, seal_key):
        media = random_pixel_media(0)
        lat = seal_embed(seal_key, media)
        result = seal_detect(seal_key, lat, media)
        assert result.bit_accuracy == 1.0
        assert result.is_watermarked
        assert result.p_value < 1e-12

    def test_single_hash_bit_flip_kills_all_patches(self, seal_key):
        media = random_pixel_media(1)
        lat = seal_embed(seal_key, media)
        v = semantic_vector(media)
        planes = hyperplanes_from_salt(seal_key.salt, v.size, seal_key.hash_bits)
        base_hash = simhash_bits(v, planes)
        c, h, w = media.shape
        block_h, block_w = h // 8, w // 8
        pooled = media.reshape(c, 8, block_h, 8, block_w).mean(axis=(2, 4)).ravel()
        pooled_norm = np.linalg.norm(pooled - pooled.mean())
        flipped_media = None
        for i in np.argsort(np.abs(planes @ v)):
            margin = float(planes[i] @ v)
            n0 = planes[i] - planes[i].mean()
            scale = -(margin + np.sign(margin) * 0.02) / float(planes[i] @ n0)
            delta_pool = scale * n0 * pooled_norm  # undo the provider's normalization
            candidate = media + np.kron(
                delta_pool.reshape(c, 8, 8), np.ones((block_h, block_w))
            )
            new_hash = simhash_bits(semantic_vector(candidate), planes)
            if int(np.sum(new_hash != base_hash)) == 1:
                flipped_media = candidate
                break
        assert flipped_media is not None, "could not force a single-bit flip"
        result = seal_detect(seal_key, lat, flipped_media)
        assert result.bit_accuracy == 0.0
        assert not result.is_watermarked

    def test_hash_stable_under_small_pixel_noise(self, seal_key):
        stable = 0
        for i in range(100):
            media = random_pixel_media(100 + i)
            v = semantic_vector(media)
            planes = hyperplanes_from_salt(seal_key.salt, v.size, seal_key.hash_bits)
            before = simhash_bits(v, planes)
            noise = SeededRng(derive_key(KEY, "pix"), i).gaussians(media.size).reshape(media.shape)
            after = simhash_bits(semantic_vector(media + noise / 255.0), planes)
            stable += int(np.array_equal(before, after))
        assert stable >= 95

    def test_transplant_preserves_pooled_means(self, seal_key):
        lat = seal_embed(seal_key, random_pixel_media(2))
        source = gaussian_latent(SeededRng(KEY, 55), SHAPE)
        moved = seal_transplant(lat, source)
        pooled = lambda a: a.reshape(4, 8, 4, 8, 4).mean(axis=(2, 4))
        assert np.allclose(pooled(moved), pooled(source), atol=1e-12)

    def test_null_rate_calibrated(self, seal_key):
        assert 0.0 < seal_key.null_match_rate < 0.1

    def test_key_json_round_trip(self, seal_key):
        assert SEALKey.from_json(seal_key.to_json()) == seal_key


@pytest.fixture(scope="module")
def vs_key():
    return videoshield_generate_key(
        derive_key(KEY, "vs"), SHAPE, frames=8, max_frames=16, message_bits=60, replication=(1, 8, 8)
    )


class TestVideoShield:
    def test_exact_inversion(self, vs_key):
        video = videoshield_embed(vs_key, 0)
        result = videoshield_detect(vs_key, video, PVAL, sample_id=0)
        assert result.bit_accuracy == 1.0
        assert result.tampered_frames == ()
        assert result.per_frame_accuracies == tuple([1.0] * 8)
        assert result.is_watermarked

    def test_marginal_standard_normal(self, vs_key):
        from scipy.stats import kstest

        pooled = np.concatenate([videoshield_embed(vs_key, i).ravel() for i in range(2)])
        assert kstest(pooled, "norm").statistic < 1.628 / np.sqrt(pooled.size)

    def test_frame_swap_localized(self, vs_key):
        video = videoshield_embed(vs_key, 1)
        video[[2, 5]] = video[[5, 2]]
        result = videoshield_detect(vs_key, video, PVAL, sample_id=1)
        assert result.tampered_frames == (2, 5)
        assert result.bit_accuracy == 1.0  # message itself untouched

    def test_all_single_swaps_localized(self, vs_key):
        for t_count in (4, 8, 16):
            key = videoshield_generate_key(
                derive_key(KEY, "vs", t_count), SHAPE, frames=t_count, max_frames=16,
                message_bits=60, replication=(1, 8, 8),
            )
            video = videoshield_embed(key, 2)
            for a in range(0, t_count - 1, 2):
                b = a + 1
                swapped = video.copy()
                swapped[[a, b]] = swapped[[b, a]]
                result = videoshield_detect(key, swapped, PVAL, sample_id=2)
                assert result.tampered_frames == (a, b)

    def test_frame_average_degrades_accuracy(self, vs_key):
        video = videoshield_embed(vs_key, 3)
        attacked = video.copy()
        attacked[3] = video[2:5].mean(axis=0)
        result = videoshield_detect(vs_key, attacked, PVAL, sample_id=3)
        clean = videoshield_detect(vs_key, video, PVAL, sample_id=3)
        assert result.per_frame_accuracies[3] < clean.per_frame_accuracies[3]
        assert 3 in result.tampered_frames

    def test_too_many_frames_rejected(self):
        with pytest.raises(ValueError):
            videoshield_generate_key(KEY, SHAPE, frames=17, max_frames=16, message_bits=60, replication=(1, 8, 8))

    def test_key_json_round_trip(self, vs_key):
        assert VideoShieldKey.from_json(vs_key.to_json()) == vs_key


class TestPurity:
    def test_detectors_pure(self, gs_key, prc_key):
        lat = gs_embed(gs_key, 2)
        a = gs_detect(gs_key, lat, PVAL, 2)
        b = gs_detect(gs_key, lat, PVAL, 2)
        assert (a.bit_accuracy, a.p_value, a.is_watermarked) == (b.bit_accuracy, b.p_value, b.is_watermarked)
        assert np.array_equal(a.recovered_bits, b.recovered_bits)
        lat2 = prc_embed(prc_key, 2, SHAPE)
        c = prc_detect(prc_key, lat2, 0.01)
        d = prc_detect(prc_key, lat2, 0.01)
        assert (c.bit_accuracy, c.p_value) == (d.bit_accuracy, d.p_value)

    def test_result_invariants(self):
        with pytest.raises(ValueError):
            BitDetectionResult(np.array([1]), 1.0, 0.0, True, PVAL)
