import numpy as np
import pytest

from latentmark.attacks import AttackError, AttackSpec, apply_attack, apply_chain, jpeg_tables, parse_chain
from latentmark.channel import Channel, ChannelSpec, Media
from latentmark.tensor import SeededRng, derive_key, gaussian_latent

KEY = bytes(range(32))


def pixel_media(stream, shape=(3, 64, 64)):
    """Integer-valued random image, like decoded uint8 pixels."""
    vals = SeededRng(derive_key(KEY, "img"), stream).uniforms(int(np.prod(shape)))
    return Media(np.floor(vals * 256.0).clip(0, 255).reshape(shape), pixel=True)


def video_media(stream, t=8, shape=(3, 32, 32)):
    vals = SeededRng(derive_key(KEY, "vid"), stream).uniforms(t * int(np.prod(shape)))
    return Media((vals * 255.0).reshape(t, *shape), pixel=True)


def rng_for(label):
    return SeededRng(derive_key(KEY, label))


class TestJpeg:
    def test_q100_tables_all_ones(self):
        luma, chroma = jpeg_tables(100)
        assert np.all(luma == 1)
        assert np.all(chroma == 1)

    def test_q100_pixel_error_at_most_two(self):
        media = pixel_media(0)
        out = apply_attack(AttackSpec("jpeg", (100,)), media)
        assert np.max(np.abs(out.array - media.array)) <= 2.0

    def test_scaling_rule_reference_values(self):
        # libjpeg rule evaluated by hand: q=50 -> scale 100 -> tables unchanged
        luma50, _ = jpeg_tables(50)
        assert np.array_equal(luma50, np.clip(np.floor((np.array(luma50) * 100 + 50) / 100), 1, 255))
        luma10, _ = jpeg_tables(10)
        # q=10 -> scale 500: first luma entry floor((16*500+50)/100) = 80
        assert luma10[0, 0] == 80
        luma90, _ = jpeg_tables(90)
        # q=90 -> scale 20: floor((16*20+50)/100) = 3
        assert luma90[0, 0] == 3

    def test_quality_monotone_psnr(self):
        media = pixel_media(1)
        psnrs = []
        for q in [10, 30, 60, 90]:
            out = apply_attack(AttackSpec("jpeg", (q,)), media)
            mse = np.mean((out.array - media.array) ** 2)
            psnrs.append(10 * np.log10(255.0**2 / mse))
        assert all(a <= b for a, b in zip(psnrs, psnrs[1:]))

    def test_requires_pixel_media(self):
        latent_media = Media(gaussian_latent(SeededRng(KEY, 5), (4, 32, 32)), pixel=False)
        with pytest.raises(AttackError):
            apply_attack(AttackSpec("jpeg", (60,)), latent_media)


class TestIdentityParameters:
    def test_rot0_crop1_jitter111_near_identity(self):
        media = pixel_media(2)
        for spec in [AttackSpec("rot", (0.0,)), AttackSpec("crop", (1.0,)), AttackSpec("jitter", (1.0, 1.0, 1.0))]:
            out = apply_attack(spec, media)
            assert np.max(np.abs(out.array - media.array)) <= 1.0, spec.kind


class TestNoise:
    def test_moment_check_on_mid_gray(self):
        # per-pixel MSE ~ sigma^2 within 5% before clamping effects
        gray = Media(np.full((3, 64, 64), 127.5), pixel=True)
        out = apply_attack(AttackSpec("noise", (25.0,)), gray, rng_for("n1"))
        mse = np.mean((out.array - gray.array) ** 2)
        assert abs(mse - 625.0) / 625.0 < 0.05

    def test_deterministic_given_rng(self):
        media = pixel_media(3)
        a = apply_attack(AttackSpec("noise", (10.0,)), media, rng_for("n2"))
        b = apply_attack(AttackSpec("noise", (10.0,)), media, rng_for("n2"))
        assert np.array_equal(a.array, b.array)

    def test_latent_media_not_clamped(self):
        latent_media = Media(gaussian_latent(SeededRng(KEY, 6), (4, 32, 32)), pixel=False)
        out = apply_attack(AttackSpec("noise", (1.0,)), latent_media, rng_for("n3"))
        assert out.array.min() < 0


class TestShapesAndKinds:
    def test_every_attack_preserves_shape(self):
        media = pixel_media(4)
        vid = video_media(5)
        image_specs = [
            AttackSpec("rot", (15.0,)),
            AttackSpec("crop", (0.8,)),
            AttackSpec("noise", (5.0,)),
            AttackSpec("blur", (5, 1.0)),
            AttackSpec("jpeg", (60,)),
            AttackSpec("jitter", (1.2, 1.1, 0.9)),
        ]
        for spec in image_specs:
            out = apply_attack(spec, media, rng_for(spec.kind))
            assert out.array.shape == media.array.shape
        video_specs = [AttackSpec("favg", (3,)), AttackSpec("fswap", (2,)), AttackSpec("mpeg", (60, 4))]
        for spec in video_specs:
            out = apply_attack(spec, vid, rng_for(spec.kind))
            assert out.array.shape == vid.array.shape

    def test_video_kinds_reject_images(self):
        media = pixel_media(6)
        for kind, args in [("favg", (3,)), ("fswap", (1,)), ("mpeg", (60, 4))]:
            with pytest.raises(AttackError):
                apply_attack(AttackSpec(kind, args), media, rng_for("x"))

    def test_parameter_validation(self):
        with pytest.raises(AttackError):
            AttackSpec("jpeg", (0,))
        with pytest.raises(AttackError):
            AttackSpec("crop", (1.5,))
        with pytest.raises(AttackError):
            AttackSpec("blur", (4, 1.0))
        with pytest.raises(AttackError):
            AttackSpec("favg", (2,))
        with pytest.raises(AttackError):
            AttackSpec("wat", (1,))


class TestFrameAttacks:
    def test_frame_average_window(self):
        vid = video_media(7, t=5)
        out = apply_attack(AttackSpec("favg", (3,)), vid)
        want_mid = vid.array[1:4].mean(axis=0)
        assert np.allclose(out.array[2], want_mid)
        # edge frames use a truncated window
        assert np.allclose(out.array[0], vid.array[0:2].mean(axis=0))

    def test_explicit_swap_pairs(self):
        vid = video_media(8, t=6)
        out = apply_attack(AttackSpec("fswap", (1,), pairs=((1, 4),)), vid)
        assert np.array_equal(out.array[1], vid.array[4])
        assert np.array_equal(out.array[4], vid.array[1])
        assert np.array_equal(out.array[0], vid.array[0])

    def test_seeded_swap_deterministic(self):
        vid = video_media(9, t=8)
        a = apply_attack(AttackSpec("fswap", (2,)), vid, rng_for("s1"))
        b = apply_attack(AttackSpec("fswap", (2,)), vid, rng_for("s1"))
        assert np.array_equal(a.array, b.array)
        assert not np.array_equal(a.array, vid.array)

    def test_mpeg_keyframes_match_jpeg(self):
        vid = video_media(10, t=4)
        out = apply_attack(AttackSpec("mpeg", (60, 4)), vid)
        key_frame = apply_attack(AttackSpec("jpeg", (60,)), Media(vid.array[0], pixel=True))
        assert np.allclose(out.array[0], key_frame.array)


class TestChainParser:
    def test_single_tokens(self):
        for text, kind, args in [
            ("jpeg:60", "jpeg", (60.0,)),
            ("rot:15", "rot", (15.0,)),
            ("crop:0.8", "crop", (0.8,)),
            ("noise:25", "noise", (25.0,)),
            ("blur:5,1.0", "blur", (5.0, 1.0)),
            ("jitter:1.2,1.1,0.9", "jitter", (1.2, 1.1, 0.9)),
            ("favg:3", "favg", (3.0,)),
            ("fswap:2", "fswap", (2.0,)),
            ("mpeg:60,8", "mpeg", (60.0, 8.0)),
        ]:
            (spec,) = parse_chain(text)
            assert spec.kind == kind
            assert spec.args == args

    def test_chained_tokens_with_multi_arg_attacks(self):
        specs = parse_chain("blur:5,1.0,jpeg:60,rot:15")
        assert [s.kind for s in specs] == ["blur", "jpeg", "rot"]
        assert specs[0].args == (5.0, 1.0)

    def test_round_trip_tokens(self):
        specs = parse_chain("jpeg:60,blur:3,0.5,fswap:2")
        again = parse_chain(",".join(s.token() for s in specs))
        assert again == specs

    def test_unknown_token_named(self):
        with pytest.raises(AttackError, match="warp"):
            parse_chain("jpeg:60,warp:3")

    def test_empty_chain(self):
        assert parse_chain("") == ()

    def test_chain_application_deterministic(self):
        media = pixel_media(11)
        specs = parse_chain("noise:5,jpeg:80")
        a = apply_chain(specs, media, KEY, call_id=3)
        b = apply_chain(specs, media, KEY, call_id=3)
        c = apply_chain(specs, media, KEY, call_id=4)
        assert np.array_equal(a.array, b.array)
        assert not np.array_equal(a.array, c.array)
