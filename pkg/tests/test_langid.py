import pytest

from corpuskit.langid import (
    DEFAULT_MODEL_PATH,
    LanguageVerdict,
    TrigramModel,
    build_default_model,
    default_model,
    detect_language,
    read_seed_corpus,
    split_seed,
)

ENGLISH_500 = (
    "The city lies on the northern bank of a wide river, a few miles from the sea. It grew up around a "
    "medieval market and a small harbour, and for several centuries its wealth came from the wool trade. "
    "In the eighteenth century canals were dug to connect it with the coal fields further inland, and "
    "mills and warehouses were built along the water. Today most of the old industry has gone, but many "
    "of the buildings survive and have been turned into offices, apartments and a museum of local history."
)


def test_bundled_model_matches_seed_training_split():
    shipped = TrigramModel.load(DEFAULT_MODEL_PATH)
    assert shipped.counts == build_default_model().counts


def test_binary_round_trip(tmp_path):
    model = TrigramModel.train({"en": ["hello world"], "de": ["hallo welt"]})
    path = tmp_path / "m.bin"
    model.save(path)
    assert path.read_bytes()[:4] == b"CKLI"
    assert TrigramModel.load(path).counts == model.counts


def test_bad_magic(tmp_path):
    with pytest.raises(ValueError, match="magic"):
        TrigramModel.from_bytes(b"XXXX" + b"\0" * 10)


def test_heldout_accuracy_at_least_95_percent():
    _, held = split_seed(read_seed_corpus())
    model = default_model()
    total = sum(len(v) for v in held.values())
    correct = sum(model.detect(line).language == lang for lang, lines in held.items() for line in lines)
    assert total >= 50
    assert correct / total >= 0.95


def test_heldout_lines_not_in_training():
    corpus = read_seed_corpus()
    train, held = split_seed(corpus)
    for lang in corpus:
        assert not set(train[lang]) & set(held[lang])


def test_english_paragraph():
    assert len(ENGLISH_500) >= 480
    verdict = detect_language(ENGLISH_500)
    assert verdict.language == "en"
    assert verdict.confidence > 0.9


def test_empty_and_short_text_confidence_zero():
    assert detect_language("").confidence == 0.0
    assert detect_language("short words here").confidence == 0.0


def test_deterministic():
    assert detect_language(ENGLISH_500) == detect_language(ENGLISH_500)


def test_pluggable_model():
    tiny = TrigramModel.train({"aa": ["aaaa aaaa aaaa aaaa"], "bb": ["bbbb bbbb bbbb bbbb"]})
    assert detect_language("aaaa aaaa aaaa aaaa aaaa", model=tiny).language == "aa"


def test_verdict_confidence_validated():
    with pytest.raises(ValueError):
        LanguageVerdict("en", 1.5)
