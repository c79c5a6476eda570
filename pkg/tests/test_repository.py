import numpy as np
import pytest

from neural_osm.domain import EncoderKind
from neural_osm.errors import ArchiveVersionError, ContractError, ParseError
from neural_osm.repository import ModelRepository
from neural_osm.schemas import RunConfig


@pytest.mark.parametrize("kind", [EncoderKind.WORD, EncoderKind.BAG, EncoderKind.BILSTM, EncoderKind.CNN])
def test_round_trip_scores_identically(tmp_path, toy_model, kind):
    model, examples = toy_model(kind)
    repo = ModelRepository(tmp_path / "model.osm")
    repo.save(model, RunConfig(seed=7, encoder=kind))
    loaded, run = repo.load()

    assert run.seed == 7 and run.encoder == kind
    assert loaded.config == model.config
    assert loaded.source_vocab.tokens == model.source_vocab.tokens
    for name, value in model.store.snapshot().items():
        np.testing.assert_array_equal(loaded.store[name].data, value)
    for pair, ops in examples:
        assert loaded.sequence_score(pair, ops) == model.sequence_score(pair, ops)


def test_morph_lexicon_survives(tmp_path, toy_model):
    from neural_osm.corpus import SegmentationLexicon
    from neural_osm.osm import NeuralOSM

    base, _ = toy_model(EncoderKind.BAG)
    lexicon = SegmentationLexicon.from_entries({"a": ("a",), "bc": ("b", "c")})
    model = NeuralOSM(base.config, base.source_vocab, base.target_vocab, lexicon, seed=3)
    repo = ModelRepository(tmp_path / "morph.osm")
    repo.save(model, RunConfig(seed=3))
    loaded, _ = repo.load()
    assert loaded.lexicon.entries == lexicon.entries
    assert loaded.lexicon.units == lexicon.units


def test_same_seed_same_bytes(tmp_path, toy_model):
    paths = []
    for name in ("one.osm", "two.osm"):
        model, _ = toy_model(EncoderKind.CNN, seed=11)
        paths.append(ModelRepository(tmp_path / name).save(model, RunConfig(seed=11)))
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_header(tmp_path, toy_model):
    model, _ = toy_model(EncoderKind.WORD)
    path = ModelRepository(tmp_path / "m.osm").save(model, RunConfig(seed=7))
    assert path.read_text(encoding="utf-8").splitlines()[0] == "OSMMODEL 1"


def _rewrite(path, old, new):
    text = path.read_text(encoding="utf-8")
    assert old in text
    path.write_text(text.replace(old, new, 1), encoding="utf-8")


def test_newer_version_is_rejected(tmp_path, toy_model):
    model, _ = toy_model(EncoderKind.WORD)
    path = ModelRepository(tmp_path / "m.osm").save(model, RunConfig(seed=7))
    _rewrite(path, "OSMMODEL 1", "OSMMODEL 2")
    with pytest.raises(ArchiveVersionError):
        ModelRepository(path).load()


def test_not_an_archive(tmp_path):
    path = tmp_path / "notes.txt"
    path.write_text("hello\n", encoding="utf-8")
    with pytest.raises(ArchiveVersionError):
        ModelRepository(path).load()


def test_shape_mismatch(tmp_path, toy_model):
    model, _ = toy_model(EncoderKind.WORD)
    path = ModelRepository(tmp_path / "m.osm").save(model, RunConfig(seed=7))
    _rewrite(path, "param osm.h0 1 4", "param osm.h0 1 5")
    with pytest.raises(ContractError):
        ModelRepository(path).load()


def test_truncated_archive(tmp_path, toy_model):
    model, _ = toy_model(EncoderKind.WORD)
    path = ModelRepository(tmp_path / "m.osm").save(model, RunConfig(seed=7))
    lines = path.read_text(encoding="utf-8").splitlines()
    path.write_text("\n".join(lines[:-3]) + "\n", encoding="utf-8")
    with pytest.raises(ParseError):
        ModelRepository(path).load()


def test_missing_archive(tmp_path):
    with pytest.raises(FileNotFoundError):
        ModelRepository(tmp_path / "absent.osm").load()
