import numpy as np
import pytest

from smoe.data import (
    ALPHABET,
    ManifestRecord,
    SyntheticTaskSpec,
    generate_dataset_files,
    load_dataset,
    make_paired_dataset,
    make_utterance,
    read_manifest,
    render_symbols,
    write_manifest,
)
from smoe.errors import ConfigError, FormatError
from smoe.moe import Bandwidth, Task
from smoe.seqio import Vocabulary


def test_default_task_spec_is_a_derangement():
    spec = SyntheticTaskSpec.default()
    assert spec.measured_disagreement() == 1.0
    assert sorted(spec.map_b.values()) == sorted(ALPHABET)
    assert all(spec.map_b[s] != s for s in ALPHABET)


def test_task_spec_apply():
    spec = SyntheticTaskSpec.default()
    assert spec.apply(Task.ASR, "abc") == "abc"
    st = spec.apply(Task.ST, "abc")
    assert st != "abc" and len(st) == 3


def test_render_deterministic_and_peaked():
    a = render_symbols("abcd", seed=5)
    b = render_symbols("abcd", seed=5)
    assert np.array_equal(a.samples, b.samples)
    assert np.abs(a.samples).max() <= 0.95 + 1e-12
    # 4 tone segments with 3 inter-symbol gaps
    assert len(a.samples) == 4 * 1280 + 3 * 320
    with pytest.raises(ConfigError):
        render_symbols("", seed=0)


def test_make_utterance_nb_and_wb_geometry_match():
    spec = SyntheticTaskSpec.default()
    vocab = Vocabulary()
    wb = make_utterance("abcd", Task.ASR, spec, vocab, seed=1)
    nb = make_utterance("abcd", Task.ASR, spec, vocab, seed=1, narrowband=True)
    assert wb.bandwidth is Bandwidth.WB and nb.bandwidth is Bandwidth.NB
    assert wb.features.frames.shape == nb.features.frames.shape
    assert wb.target.ids == nb.target.ids


def test_paired_dataset_counts_and_tasks():
    items = make_paired_dataset(6, seed=1, nb_fraction=0.5)
    # 6 inputs x 2 tasks, plus NB twins for 3 inputs x 2 tasks
    assert len(items) == 12 + 6
    assert sum(1 for it in items if it.task is Task.ASR) == sum(
        1 for it in items if it.task is Task.ST
    )
    n_nb = sum(1 for it in items if it.bandwidth is Bandwidth.NB)
    assert n_nb == 6


def test_generate_dataset_files_counts(tmp_path):
    manifest = generate_dataset_files(tmp_path, n_items=20, nbwb_mix_fraction=0.15, seed=3)
    records = read_manifest(manifest)
    wb = [r for r in records if r.bandwidth is Bandwidth.WB]
    nb = [r for r in records if r.bandwidth is Bandwidth.NB]
    assert len(wb) == 20
    assert len(nb) == 3  # round(0.15 * 20)
    assert (tmp_path / "vocab.txt").exists()
    assert (tmp_path / "targets.txt").exists()


def test_generate_dataset_files_zero_mix(tmp_path):
    records = read_manifest(
        generate_dataset_files(tmp_path, n_items=4, nbwb_mix_fraction=0.0, seed=3)
    )
    assert all(r.bandwidth is Bandwidth.WB for r in records)


def test_generate_dataset_deterministic(tmp_path):
    m1 = generate_dataset_files(tmp_path / "a", n_items=6, nbwb_mix_fraction=0.3, seed=9)
    m2 = generate_dataset_files(tmp_path / "b", n_items=6, nbwb_mix_fraction=0.3, seed=9)
    assert m1.read_text() == m2.read_text()
    w1 = sorted((tmp_path / "a" / "wavs").iterdir())
    w2 = sorted((tmp_path / "b" / "wavs").iterdir())
    assert [p.name for p in w1] == [p.name for p in w2]
    for p1, p2 in zip(w1, w2):
        assert p1.read_bytes() == p2.read_bytes()


def test_load_dataset_round_trip(tmp_path):
    manifest = generate_dataset_files(tmp_path, n_items=4, nbwb_mix_fraction=0.5, seed=5)
    vocab = Vocabulary.load(tmp_path / "vocab.txt")
    items = load_dataset(manifest, vocab)
    records = read_manifest(manifest)
    assert len(items) == len(records)
    for it, r in zip(items, records):
        assert it.task is r.task
        assert it.bandwidth is r.bandwidth
        assert it.text.decode("utf-8") == r.text


def test_manifest_round_trip(tmp_path):
    records = [
        ManifestRecord("wavs/x.wav", Bandwidth.WB, Task.ASR, "abcd"),
        ManifestRecord("wavs/y.wav", Bandwidth.NB, Task.ST, "fghi"),
    ]
    path = tmp_path / "m.tsv"
    write_manifest(path, records)
    assert read_manifest(path) == records
    assert path.read_text().splitlines()[0] == "smoe-manifest v1"


def test_manifest_rejects_bad_header(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("wrong header\n")
    with pytest.raises(FormatError):
        read_manifest(path)
