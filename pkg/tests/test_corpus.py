import numpy as np
import pytest

from multimod.corpus import (CAPTION_TEMPLATES, Vocabulary, generate_corpus,
                             load_corpus, save_corpus)
from multimod.errors import ConfigError, ContractError


def small_corpus(seed=0, sigma=0.1):
    return generate_corpus(seed, num_concepts=6, samples_per_split=12,
                           noise_sigma=sigma)


def test_same_seed_is_identical(tmp_path):
    a = small_corpus()
    b = small_corpus()
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_corpus(a, str(p1))
    save_corpus(b, str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_different_seed_differs(tmp_path):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_corpus(small_corpus(0), str(p1))
    save_corpus(small_corpus(1), str(p2))
    assert p1.read_bytes() != p2.read_bytes()


def test_concept_histogram_balanced():
    corpus = small_corpus()
    counts = np.bincount([s.concept for s in corpus.train], minlength=6)
    assert counts.max() - counts.min() <= 1


def test_both_modalities_present():
    corpus = small_corpus()
    assert any(s.is_video for s in corpus.train)
    assert any(not s.is_video for s in corpus.train)
    for s in corpus.train:
        assert s.frames.shape[0] == (4 if s.is_video else 1)


def test_zero_noise_patch_means_depend_only_on_concept():
    corpus = generate_corpus(3, num_concepts=4, samples_per_split=16, noise_sigma=0.0)

    def patch_means(sample):
        f = sample.frames
        gh = f.shape[1] // 8
        patches = f.reshape(f.shape[0], gh, 8, gh, 8, f.shape[3])
        return patches.mean(axis=(2, 4, 5))

    by_concept = {}
    for s in corpus.train:
        key = (s.concept, s.is_video)
        means = patch_means(s)
        if key in by_concept:
            assert np.allclose(means, by_concept[key], atol=1e-12)
        else:
            by_concept[key] = means


def test_caption_mentions_concept_exactly_once():
    corpus = small_corpus()
    for s in corpus.train + corpus.eval:
        token = corpus.vocab.concept_token(s.concept)
        assert s.caption.count(token) == 1
        assert s.answer == [token]


def test_splits_disjoint():
    corpus = small_corpus()
    train_bytes = {s.frames.tobytes() for s in corpus.train}
    for s in corpus.eval:
        assert s.frames.tobytes() not in train_bytes


def test_save_load_roundtrip(tmp_path):
    corpus = small_corpus()
    path = tmp_path / "corpus.json"
    save_corpus(corpus, str(path))
    loaded = load_corpus(str(path))
    assert len(loaded.train) == len(corpus.train)
    s0, l0 = corpus.train[0], loaded.train[0]
    assert np.array_equal(s0.frames, l0.frames)
    assert s0.caption == l0.caption
    assert loaded.vocab.size == corpus.vocab.size


def test_vocabulary_encode_decode():
    vocab = Vocabulary(4)
    ids = vocab.encode("the picture shows a obj2")
    assert vocab.decode(ids) == "the picture shows a obj2"
    with pytest.raises(ContractError):
        vocab.encode("unknownword")
    assert len(vocab.coord_tokens()) == 100


def test_templates_share_first_word():
    first = {t.split()[0] for t in CAPTION_TEMPLATES}
    assert len(first) == 1


def test_too_few_concepts_rejected():
    with pytest.raises(ConfigError):
        generate_corpus(0, num_concepts=1, samples_per_split=4, noise_sigma=0.1)
