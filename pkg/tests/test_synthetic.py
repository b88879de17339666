import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmfusion.errors import ConfigError
from mmfusion.synthetic import (CLASS_COUNTS_5037, GeneratorSpec, bayes_oracle,
                                class_pattern, generate, load_truth,
                                shifted_pairing, token_inventory)
from mmfusion.training import largest_remainder


def small_spec(**overrides):
    base = dict(n_samples=30, seed=7, alpha_text=0.4, alpha_image=0.4,
                vocab_size=45, resolution=8)
    base.update(overrides)
    return GeneratorSpec(**base)


class TestSpecValidation:
    def test_defaults_are_valid(self):
        spec = GeneratorSpec()
        assert spec.n_classes == 9
        assert spec.text_pairing == shifted_pairing(9, 1)
        assert spec.image_pairing == shifted_pairing(9, 2)
        assert spec.text_pairing != spec.image_pairing

    def test_proportions_must_sum_to_one(self):
        with pytest.raises(ConfigError):
            GeneratorSpec(proportions=(0.5,) * 9)

    def test_fixed_point_pairing_rejected_when_ambiguous(self):
        with pytest.raises(ConfigError, match="fixed point"):
            small_spec(text_pairing=(0, 2, 3, 4, 5, 6, 7, 8, 1))

    def test_fixed_point_pairing_allowed_when_alpha_zero(self):
        spec = small_spec(alpha_text=0.0,
                          text_pairing=(0, 2, 3, 4, 5, 6, 7, 8, 1))
        assert spec.text_pairing[0] == 0

    def test_non_permutation_rejected(self):
        with pytest.raises(ConfigError, match="permutation"):
            small_spec(image_pairing=(1, 1, 2, 3, 4, 5, 6, 7, 8))

    def test_alpha_range(self):
        with pytest.raises(ConfigError):
            small_spec(alpha_text=1.5)
        with pytest.raises(ConfigError):
            small_spec(alpha_image=-0.1)

    def test_minimum_samples(self):
        with pytest.raises(ConfigError):
            small_spec(n_samples=5)

    def test_vocab_floor(self):
        with pytest.raises(ConfigError):
            small_spec(vocab_size=9)

    def test_roundtrip_dict(self):
        spec = small_spec()
        again = GeneratorSpec.from_dict(spec.to_dict())
        assert again == spec

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError, match="unknown"):
            GeneratorSpec.from_dict({"n_samples": 30, "mystery": 1})


class TestAllocation:
    def test_table_counts_at_full_size(self):
        assert GeneratorSpec().class_counts() == list(CLASS_COUNTS_5037)

    def test_counts_follow_largest_remainder(self):
        spec = small_spec(n_samples=4500)
        assert spec.class_counts() == largest_remainder(
            4500, spec.proportions)
        assert sum(spec.class_counts()) == 4500


class TestInventoriesAndPatterns:
    def test_inventories_disjoint_across_classes(self):
        spec = small_spec()
        seen = set()
        for c in range(spec.n_classes):
            words = token_inventory(spec, c)
            assert len(words) == spec.tokens_per_class
            assert len(set(words)) == len(words)
            assert not (set(words) & seen)
            seen.update(words)

    def test_patterns_distinct_and_in_range(self):
        spec = small_spec()
        patterns = [class_pattern(spec, c) for c in range(spec.n_classes)]
        for px in patterns:
            assert px.shape == (3, 8, 8)
            assert px.min() >= 0.0 and px.max() <= 1.0
        for i in range(len(patterns)):
            for j in range(i + 1, len(patterns)):
                assert np.abs(patterns[i] - patterns[j]).max() > 0.1


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("corpus"))
    spec = small_spec(n_samples=60)
    return spec, generate(spec, out)


class TestGenerate:
    def test_counts_exact(self, generated):
        spec, ds = generated
        rows = [json.loads(line) for line in
                open(ds.manifest_path, encoding="utf-8")]
        counts = np.bincount([r["label"] for r in rows],
                             minlength=spec.n_classes)
        assert counts.tolist() == spec.class_counts()

    def test_manifest_never_leaks_latent_flags(self, generated):
        _, ds = generated
        for line in open(ds.manifest_path, encoding="utf-8"):
            row = json.loads(line)
            assert set(row) == {"id", "text", "image_path", "label"}

    def test_sentences_use_source_inventory(self, generated):
        spec, ds = generated
        manifest = {r["id"]: r for r in
                    (json.loads(line) for line in
                     open(ds.manifest_path, encoding="utf-8"))}
        for truth in load_truth(ds.out_dir):
            words = manifest[truth["id"]]["text"].split()
            assert len(words) == 20
            inventory = set(token_inventory(spec, truth["text_source"]))
            assert set(words) <= inventory
            if truth["text_ambiguous"]:
                assert truth["text_source"] == spec.text_pairing[truth["label"]]
            else:
                assert truth["text_source"] == truth["label"]

    def test_images_match_source_pattern(self, generated):
        from mmfusion.images import read_ppm
        spec, ds = generated
        patterns = [class_pattern(spec, c) for c in range(spec.n_classes)]
        for truth in load_truth(ds.out_dir)[:10]:
            path = f"{ds.out_dir}/images/{truth['id']:06d}.ppm"
            px = read_ppm(path).pixels
            dists = [float(np.mean(np.abs(px - p))) for p in patterns]
            assert int(np.argmin(dists)) == truth["image_source"]

    def test_regeneration_byte_identical(self, generated, tmp_path):
        spec, ds = generated
        again = generate(spec, str(tmp_path / "again"))
        assert (open(ds.manifest_path, "rb").read()
                == open(again.manifest_path, "rb").read())
        assert (open(ds.truth_path, "rb").read()
                == open(again.truth_path, "rb").read())
        assert (open(f"{ds.out_dir}/images/000003.ppm", "rb").read()
                == open(f"{again.out_dir}/images/000003.ppm", "rb").read())

    def test_different_seed_changes_content(self, generated, tmp_path):
        spec, ds = generated
        other_spec = small_spec(n_samples=60, seed=8)
        other = generate(other_spec, str(tmp_path / "other"))
        assert (open(ds.manifest_path, "rb").read()
                != open(other.manifest_path, "rb").read())

    def test_ambiguity_rate_concentrates(self, tmp_path):
        spec = GeneratorSpec(n_samples=5000, seed=3, alpha_text=0.4,
                             alpha_image=0.2, vocab_size=45, resolution=4)
        ds = generate(spec, str(tmp_path / "big"))
        truth = load_truth(ds.out_dir)
        text_rate = np.mean([t["text_ambiguous"] for t in truth])
        image_rate = np.mean([t["image_ambiguous"] for t in truth])
        assert abs(text_rate - 0.4) <= 0.02
        assert abs(image_rate - 0.2) <= 0.02

    def test_alpha_one_always_swaps(self, tmp_path):
        spec = small_spec(alpha_text=1.0)
        ds = generate(spec, str(tmp_path / "swap"))
        assert all(t["text_ambiguous"] for t in load_truth(ds.out_dir))


class TestBayesOracle:
    def test_unambiguous_is_perfect(self):
        spec = small_spec(alpha_text=0.0, alpha_image=0.0)
        for modality in ("text", "image", "multimodal"):
            assert bayes_oracle(spec, modality) == 1.0

    def test_disjoint_pairings_resolve_jointly(self):
        # shift-by-1 text and shift-by-2 image confusions never produce
        # the same evidence pair from two different classes
        spec = GeneratorSpec(n_samples=4500, alpha_text=0.4, alpha_image=0.4,
                             vocab_size=45, resolution=8)
        text = bayes_oracle(spec, "text")
        image = bayes_oracle(spec, "image")
        mm = bayes_oracle(spec, "multimodal")
        assert 0.0 < text < 1.0
        assert 0.0 < image < 1.0
        assert mm == 1.0
        assert mm > max(text, image)

    def test_text_oracle_matches_direct_enumeration(self):
        spec = GeneratorSpec(n_samples=4500, alpha_text=0.4, alpha_image=0.4,
                             vocab_size=45, resolution=8)
        counts = spec.class_counts()
        p = [c / spec.n_samples for c in counts]
        inverse = {spec.text_pairing[c]: c for c in range(spec.n_classes)}
        expected = sum(max(p[s] * 0.6, p[inverse[s]] * 0.4)
                       for s in range(spec.n_classes))
        assert bayes_oracle(spec, "text") == pytest.approx(expected, abs=1e-15)

    def test_symmetric_swap_equal_priors(self):
        spec = GeneratorSpec(n_samples=10, class_names=("p", "q"),
                             proportions=(0.5, 0.5), alpha_text=0.5,
                             alpha_image=0.0, text_pairing=(1, 0),
                             image_pairing=(1, 0), vocab_size=8, resolution=4)
        # fully confusable: either class explains the evidence equally well
        assert bayes_oracle(spec, "text") == 0.5

    def test_total_swap_is_invertible(self):
        spec = GeneratorSpec(n_samples=10, class_names=("p", "q"),
                             proportions=(0.5, 0.5), alpha_text=1.0,
                             alpha_image=0.0, text_pairing=(1, 0),
                             image_pairing=(1, 0), vocab_size=8, resolution=4)
        assert bayes_oracle(spec, "text") == 1.0

    def test_unknown_modality(self):
        with pytest.raises(ConfigError):
            bayes_oracle(small_spec(), "audio")

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    @settings(max_examples=40, deadline=None)
    def test_multimodal_never_below_unimodal(self, a_t, a_v):
        spec = GeneratorSpec(n_samples=900, alpha_text=a_t, alpha_image=a_v,
                             vocab_size=45, resolution=8)
        mm = bayes_oracle(spec, "multimodal")
        assert mm >= bayes_oracle(spec, "text") - 1e-12
        assert mm >= bayes_oracle(spec, "image") - 1e-12
        # guessing the largest class is always available to the optimum
        assert mm >= max(spec.class_counts()) / spec.n_samples - 1e-12
