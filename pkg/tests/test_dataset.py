import numpy as np
import pytest

from ivfuse.dataset import (DatasetError, FixtureBundle, ImagePair,
                            generate_dataset, load_pairs,
                            providers_from_fixtures, semantic_generator_for,
                            synth_pair)
from ivfuse.imgio import save_image
from ivfuse.sig import image_content_hash


def test_image_pair_validation(rng):
    with pytest.raises(DatasetError, match="visible"):
        ImagePair("p", rng.random((1, 8, 8)), rng.random((1, 8, 8)))
    with pytest.raises(DatasetError, match="infrared"):
        ImagePair("p", rng.random((3, 8, 8)), rng.random((3, 8, 8)))
    with pytest.raises(DatasetError, match="unregistered"):
        ImagePair("p", rng.random((3, 8, 8)), rng.random((1, 9, 8)))
    pair = ImagePair("p", rng.random((3, 8, 8)) * 2.0, rng.random((1, 8, 8)))
    assert pair.i_vis.max() <= 1.0  # clamped at load


def test_synth_pair_deterministic_and_in_range():
    a_vis, a_ir, a_rect = synth_pair(5, (48, 48))
    b_vis, b_ir, b_rect = synth_pair(5, (48, 48))
    np.testing.assert_array_equal(a_vis, b_vis)
    np.testing.assert_array_equal(a_ir, b_ir)
    assert a_rect == b_rect
    assert a_vis.shape == (3, 48, 48) and a_ir.shape == (1, 48, 48)
    assert 0.0 <= a_vis.min() and a_vis.max() <= 1.0
    # the hot region really is hot relative to the background
    hot = a_ir[0][a_rect.top:a_rect.top + a_rect.height,
                  a_rect.left:a_rect.left + a_rect.width]
    assert hot.mean() > a_ir.mean() + 0.3


def test_generate_and_load_round_trip(tmp_path):
    fixtures = generate_dataset(tmp_path, 3, (32, 32), seed=1)
    assert set(fixtures.captions) == {"pair0000", "pair0001", "pair0002"}
    pairs = load_pairs(tmp_path)
    assert [p.pair_id for p in pairs] == ["pair0000", "pair0001", "pair0002"]
    assert pairs[0].i_vis.shape == (3, 32, 32)
    reloaded = FixtureBundle.load(tmp_path / "fixtures.json")
    assert reloaded.captions == fixtures.captions
    assert reloaded.regions == {k: list(v) for k, v in fixtures.regions.items()}


def test_missing_ir_counterpart_rejected(tmp_path, rng):
    (tmp_path / "vis").mkdir()
    (tmp_path / "ir").mkdir()
    save_image(rng.random((3, 8, 8)), tmp_path / "vis" / "a.png")
    with pytest.raises(DatasetError, match="counterpart"):
        load_pairs(tmp_path)


def test_dimension_mismatch_names_both_files(tmp_path, rng):
    (tmp_path / "vis").mkdir()
    (tmp_path / "ir").mkdir()
    save_image(rng.random((3, 8, 8)), tmp_path / "vis" / "a.png")
    save_image(rng.random((1, 9, 8)), tmp_path / "ir" / "a.png")
    with pytest.raises(DatasetError) as err:
        load_pairs(tmp_path)
    assert "a.png" in str(err.value)


def test_optional_masks_and_captions_attach(tmp_path, rng):
    from ivfuse.sig import write_mask

    generate_dataset(tmp_path, 1, (16, 16), seed=2)
    (tmp_path / "masks").mkdir()
    (tmp_path / "captions").mkdir()
    mask = (rng.random((16, 16)) > 0.5).astype(float)
    write_mask(tmp_path / "masks" / "pair0000.mask", mask)
    (tmp_path / "captions" / "pair0000.txt").write_text("a person outside\n")
    pair = load_pairs(tmp_path)[0]
    np.testing.assert_array_equal(pair.mask.m, mask)
    assert pair.caption.text == "a person outside"


def test_providers_resolve_against_pairs(tmp_path):
    generate_dataset(tmp_path, 2, (24, 24), seed=3)
    pairs = load_pairs(tmp_path)
    fixtures = FixtureBundle.load(tmp_path / "fixtures.json")
    captioner, denoiser = providers_from_fixtures(fixtures, pairs)
    caption = captioner.caption(pairs[0].i_vis)
    assert caption == fixtures.captions["pair0000"]
    assert image_content_hash(pairs[0].i_vis) in captioner.captions


def test_semantic_generator_recovers_planted_regions(tmp_path):
    generate_dataset(tmp_path, 2, (32, 32), seed=4)
    pairs = load_pairs(tmp_path)
    fixtures = FixtureBundle.load(tmp_path / "fixtures.json")
    gen = semantic_generator_for(tmp_path, pairs, text_dim=16,
                                 cache_dir=tmp_path / "work")
    for pair in pairs:
        mask = gen.mask_for_pair(pair.i_vis, pair.i_ir, pair.pair_id)
        rect = fixtures.regions[fixtures.captions[pair.pair_id]]
        want = np.zeros((32, 32))
        want[rect[0]:rect[0] + rect[2], rect[1]:rect[1] + rect[3]] = 1.0
        np.testing.assert_array_equal(mask.m, want)
        text = gen.text_for_pair(pair.i_vis)
        assert text.width == 16
        assert text.length == len(fixtures.captions[pair.pair_id].split())


def test_missing_fixture_file_rejected(tmp_path):
    generate_dataset(tmp_path, 1, (16, 16), seed=5)
    (tmp_path / "fixtures.json").unlink()
    with pytest.raises(DatasetError, match="fixture"):
        semantic_generator_for(tmp_path, load_pairs(tmp_path), text_dim=8)
