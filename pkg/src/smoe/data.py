"""Synthetic speech-like datasets: symbol strings rendered as tone audio.

Each of 16 symbols maps to a two-tone chord: a quiet low tone below 3.4 kHz
that survives narrowband conversion, and a loud high tone above 4.4 kHz
that narrowband conversion removes. A model trained only on wideband audio
leans on the dominant high tones and degrades on narrowband input, while
the low tones keep every symbol recoverable — exactly the regime the
encoder's narrowband expert is there to fix.

Transcription ("ASR") targets are the symbols themselves; translation
("ST") targets apply a fixed derangement of the alphabet, so the two tasks
conflict on every symbol and compete for shared decoder capacity.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .moe import Bandwidth, Task
from .seqio import TASK_LANGUAGE, TargetSequence, Vocabulary, build_target_sequence, train_bpe
from .signal import (
    SAMPLE_RATE_WB,
    FbankFeatures,
    Waveform,
    fbank,
    read_wav,
    to_narrowband,
    write_wav,
)

ALPHABET = "abcdefghijklmnop"
ST_ROTATION = 5  # any nonzero rotation of the alphabet is a derangement

SYMBOL_SECONDS = 0.08
GAP_SECONDS = 0.02  # silence between symbols marks segment boundaries
LOW_TONE_BASE_HZ = 800.0
LOW_TONE_STEP_HZ = 170.0
HIGH_TONE_BASE_HZ = 4400.0
HIGH_TONE_STEP_HZ = 200.0
# slot pilots sit below the identity band and survive narrowband conversion;
# they disambiguate repeated symbols the way prosody anchors real speech
PILOT_BASE_HZ = 120.0
PILOT_STEP_HZ = 60.0
PILOT_SLOTS = 8
LOW_TONE_AMP = 0.3
HIGH_TONE_AMP = 0.9
PILOT_AMP = 0.25
NOISE_AMP = 0.004


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Two symbol-level mappings over one input distribution.

    map_a is the transcription rule, map_b the translation rule; they must
    conflict on most symbols to put pressure on a shared decoder.
    """

    alphabet: str
    map_a: dict[str, str]
    map_b: dict[str, str]

    def __post_init__(self):
        for m in (self.map_a, self.map_b):
            if set(m) != set(self.alphabet):
                raise ConfigError("task maps must cover the alphabet exactly")

    @staticmethod
    def default() -> "SyntheticTaskSpec":
        identity = {s: s for s in ALPHABET}
        rotated = {
            s: ALPHABET[(i + ST_ROTATION) % len(ALPHABET)] for i, s in enumerate(ALPHABET)
        }
        return SyntheticTaskSpec(alphabet=ALPHABET, map_a=identity, map_b=rotated)

    def apply(self, task: Task, symbols: str) -> str:
        mapping = self.map_a if task is Task.ASR else self.map_b
        return "".join(mapping[s] for s in symbols)

    def measured_disagreement(self, seed: int = 0, n_samples: int = 1000) -> float:
        """Fraction of sampled symbols where the two rules emit different
        outputs."""
        rng = np.random.default_rng(seed)
        draws = rng.integers(0, len(self.alphabet), size=n_samples)
        hits = sum(
            self.map_a[self.alphabet[i]] != self.map_b[self.alphabet[i]] for i in draws
        )
        return hits / n_samples


def symbol_tones(symbol: str) -> tuple[tuple[float, float], tuple[float, float]]:
    i = ALPHABET.index(symbol)
    low = (LOW_TONE_BASE_HZ + i * LOW_TONE_STEP_HZ, LOW_TONE_AMP)
    high = (HIGH_TONE_BASE_HZ + i * HIGH_TONE_STEP_HZ, HIGH_TONE_AMP)
    return low, high


def render_symbols(symbols: str, seed: int) -> Waveform:
    """Render a symbol string as a 16 kHz two-tone sequence.

    Each segment gets a short raised-cosine envelope (limits spectral
    splatter) and is followed by a brief silence, so segment boundaries are
    visible in the features and repeated symbols stay alignable."""
    if not symbols:
        raise ConfigError("cannot render an empty symbol string")
    n_seg = int(SYMBOL_SECONDS * SAMPLE_RATE_WB)
    n_gap = int(GAP_SECONDS * SAMPLE_RATE_WB)
    t = np.arange(n_seg) / SAMPLE_RATE_WB
    ramp = max(1, n_seg // 16)
    envelope = np.ones(n_seg)
    fade = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
    envelope[:ramp] = fade
    envelope[-ramp:] = fade[::-1]
    gap = np.zeros(n_gap)
    segments = []
    for slot, s in enumerate(symbols):
        (f_lo, a_lo), (f_hi, a_hi) = symbol_tones(s)
        f_pilot = PILOT_BASE_HZ + PILOT_STEP_HZ * (slot % PILOT_SLOTS)
        seg = (
            a_lo * np.sin(2 * np.pi * f_lo * t)
            + a_hi * np.sin(2 * np.pi * f_hi * t)
            + PILOT_AMP * np.sin(2 * np.pi * f_pilot * t)
        )
        segments.append(seg * envelope)
        segments.append(gap)
    samples = np.concatenate(segments[:-1])  # no trailing gap
    rng = np.random.default_rng(seed)
    samples = samples + NOISE_AMP * rng.standard_normal(len(samples))
    peak = np.abs(samples).max()
    if peak > 0.95:
        samples *= 0.95 / peak
    return Waveform(samples=samples, sample_rate=SAMPLE_RATE_WB)


def random_symbols(rng: np.random.Generator, min_len: int, max_len: int) -> str:
    n = int(rng.integers(min_len, max_len + 1))
    return "".join(ALPHABET[int(i)] for i in rng.integers(0, len(ALPHABET), size=n))


@dataclass
class Utterance:
    """One training/eval item: cached features plus its labels and target."""

    symbols: str
    task: Task
    bandwidth: Bandwidth
    features: FbankFeatures
    target: TargetSequence
    text: bytes


def make_utterance(
    symbols: str,
    task: Task,
    task_spec: SyntheticTaskSpec,
    vocab: Vocabulary,
    seed: int,
    narrowband: bool = False,
) -> Utterance:
    wave = render_symbols(symbols, seed)
    if narrowband:
        wave = to_narrowband(wave)
    feats = fbank(wave)
    text = task_spec.apply(task, symbols).encode("ascii")
    target = build_target_sequence(task, TASK_LANGUAGE[task], text, vocab)
    return Utterance(
        symbols=symbols,
        task=task,
        bandwidth=feats.bandwidth,
        features=feats,
        target=target,
        text=text,
    )


def make_paired_dataset(
    n_inputs: int,
    seed: int,
    task_spec: SyntheticTaskSpec | None = None,
    vocab: Vocabulary | None = None,
    min_len: int = 3,
    max_len: int = 5,
    nb_fraction: float = 0.0,
    tasks: tuple[Task, ...] = (Task.ASR, Task.ST),
) -> list[Utterance]:
    """n_inputs random symbol strings, one utterance per (input, task).

    nb_fraction of the inputs additionally appear as narrowband twins
    (same symbols, same targets, downsampled audio).
    """
    if task_spec is None:
        task_spec = SyntheticTaskSpec.default()
    if vocab is None:
        vocab = Vocabulary()
    if not 0.0 <= nb_fraction <= 1.0:
        raise ConfigError(f"nb_fraction must be in [0, 1], got {nb_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    inputs = [random_symbols(rng, min_len, max_len) for _ in range(n_inputs)]
    n_nb = int(round(nb_fraction * n_inputs))
    nb_indices = set(rng.permutation(n_inputs)[:n_nb].tolist())
    items: list[Utterance] = []
    for idx, symbols in enumerate(inputs):
        item_seed = seed * 1_000_003 + idx
        for task in tasks:
            items.append(make_utterance(symbols, task, task_spec, vocab, item_seed))
            if idx in nb_indices:
                items.append(
                    make_utterance(symbols, task, task_spec, vocab, item_seed, narrowband=True)
                )
    return items


# -- manifest + on-disk datasets ----------------------------------------------

MANIFEST_HEADER = "smoe-manifest v1"


@dataclass(frozen=True)
class ManifestRecord:
    audio_path: str  # relative to the manifest directory
    bandwidth: Bandwidth
    task: Task
    text: str


def write_manifest(path: str | Path, records: list[ManifestRecord]) -> None:
    lines = [MANIFEST_HEADER]
    for r in records:
        lines.append(f"{r.audio_path}\t{r.bandwidth.value}\t{r.task.value}\t{r.text}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise FormatError(f"bad manifest header in {path}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
        audio, bw, task, text = parts
        try:
            records.append(
                ManifestRecord(
                    audio_path=audio,
                    bandwidth=Bandwidth(bw),
                    task=Task(task),
                    text=text,
                )
            )
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return records


def generate_dataset_files(
    out_dir: str | Path,
    n_items: int,
    nbwb_mix_fraction: float,
    seed: int,
    task_spec: SyntheticTaskSpec | None = None,
    min_len: int = 3,
    max_len: int = 5,
    n_merges: int = 0,
) -> Path:
    """Write WAVs, targets, a vocabulary, and a manifest; returns the
    manifest path.

    Each item gets one task (alternating transcription/translation); a
    nbwb_mix_fraction subset of items gains a narrowband twin record with
    the same task and target.
    """
    if n_items <= 0:
        raise ConfigError(f"n_items must be positive, got {n_items}")
    if not 0.0 <= nbwb_mix_fraction <= 1.0:
        raise ConfigError(f"nbwb_mix_fraction must be in [0, 1], got {nbwb_mix_fraction}")
    if task_spec is None:
        task_spec = SyntheticTaskSpec.default()
    out = Path(out_dir)
    (out / "wavs").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(4,)))
    n_nb = int(round(nbwb_mix_fraction * n_items))
    nb_indices = set(rng.permutation(n_items)[:n_nb].tolist())

    records: list[ManifestRecord] = []
    texts: list[bytes] = []
    for idx in range(n_items):
        symbols = random_symbols(rng, min_len, max_len)
        task = Task.ASR if idx % 2 == 0 else Task.ST
        text = task_spec.apply(task, symbols)
        texts.append(text.encode("ascii"))
        wave = render_symbols(symbols, seed=seed * 1_000_003 + idx)
        wb_rel = f"wavs/item_{idx:05d}_wb.wav"
        write_wav(out / wb_rel, wave)
        records.append(
            ManifestRecord(audio_path=wb_rel, bandwidth=Bandwidth.WB, task=task, text=text)
        )
        if idx in nb_indices:
            nb_rel = f"wavs/item_{idx:05d}_nb.wav"
            write_wav(out / nb_rel, to_narrowband(wave))
            records.append(
                ManifestRecord(audio_path=nb_rel, bandwidth=Bandwidth.NB, task=task, text=text)
            )

    vocab = train_bpe(texts, n_merges) if n_merges > 0 else Vocabulary()
    vocab.save(out / "vocab.txt")
    (out / "targets.txt").write_text(
        "".join(f"{r.audio_path}\t{r.text}\n" for r in records), encoding="utf-8"
    )
    manifest_path = out / "manifest.tsv"
    write_manifest(manifest_path, records)
    return manifest_path


def load_dataset(manifest_path: str | Path, vocab: Vocabulary) -> list[Utterance]:
    """Read a manifest directory back into feature-extracted utterances."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    items = []
    for r in read_manifest(manifest_path):
        wave = read_wav(base / r.audio_path)
        if wave.bandwidth is not r.bandwidth:
            raise FormatError(
                f"{r.audio_path}: manifest says {r.bandwidth.value}, "
                f"file is {wave.bandwidth.value}"
            )
        feats = fbank(wave)
        text = r.text.encode("utf-8")
        target = build_target_sequence(r.task, TASK_LANGUAGE[r.task], text, vocab)
        items.append(
            Utterance(
                symbols="",  # unknown from disk; targets carry the payload
                task=r.task,
                bandwidth=r.bandwidth,
                features=feats,
                target=target,
                text=text,
            )
        )
    return items
