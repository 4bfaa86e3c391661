"""
Speaker Embedding Providers
256-d unit-norm speaker vectors from a seeded lookup table, from externally
computed embedding files, or from a statistics-pooling encoder over log-mels.
"""

import logging
import zlib
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

import numpy as np

from src.audio.features import read_feature_file, write_feature_file
from src.audio.frame_domains import FrameSpec, Waveform, compute_mel, load_wav, resample
from src.collectors.manifest import UtteranceRecord
from src.models.acoustic_model import SPEAKER_DIM, SpeakerEmbedding
from src.utils.errors import ArgumentError, DependencyError, FormatError

logger = logging.getLogger(__name__)

Source = Union[str, UtteranceRecord, Waveform]
# frames quieter than this many nats below the loudest frame are skipped when pooling
ACTIVITY_RANGE = 6.0


class SpeakerEmbeddingProvider:
    """Maps a speaker id, a manifest record or a waveform to a SpeakerEmbedding."""

    source = "lookup"

    def embed(self, source: Source) -> SpeakerEmbedding:
        raise NotImplementedError


class LookupProvider(SpeakerEmbeddingProvider):
    """Deterministic random unit vector per speaker id."""

    source = "lookup"

    def __init__(self, speakers: Optional[Iterable[str]] = None, seed: int = 0):
        self.speakers = None if speakers is None else set(speakers)
        self.seed = seed

    def embed(self, source: Source) -> SpeakerEmbedding:
        if isinstance(source, UtteranceRecord):
            source = source.speaker
        if not isinstance(source, str):
            raise ArgumentError("lookup provider needs a speaker id or manifest record")
        if self.speakers is not None and source not in self.speakers:
            raise ArgumentError(f"unknown speaker {source!r} for lookup provider")
        rng = np.random.default_rng([self.seed, zlib.crc32(source.encode("utf-8"))])
        return SpeakerEmbedding(rng.standard_normal(SPEAKER_DIM), self.source).normalized()


class ExternalProvider(SpeakerEmbeddingProvider):
    """Reads <directory>/<speaker>.w2sf containers holding one 256-d row."""

    source = "external"

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)

    def path_for(self, speaker: str) -> Path:
        return self.directory / f"{speaker}.w2sf"

    def embed(self, source: Source) -> SpeakerEmbedding:
        if isinstance(source, UtteranceRecord):
            source = source.speaker
        if not isinstance(source, str):
            raise ArgumentError("external provider needs a speaker id or manifest record")
        path = self.path_for(source)
        if not path.exists():
            raise DependencyError(f"no external embedding for speaker {source!r} at {path}")
        matrix = read_feature_file(path)
        if matrix.shape != (1, SPEAKER_DIM):
            raise FormatError(f"{path}: expected a 1 x {SPEAKER_DIM} embedding, got {matrix.shape}")
        return SpeakerEmbedding(matrix[0], self.source).normalized()

    def save(self, speaker: str, embedding: SpeakerEmbedding) -> str:
        return write_feature_file(embedding.vector[None, :], self.path_for(speaker))


class StatsPoolProvider(SpeakerEmbeddingProvider):
    """Mean and std of active log-mel frames, centred, then a fixed seeded projection to 256 dims."""

    source = "stats-pool"

    def __init__(self, seed: int = 0, spec: Optional[FrameSpec] = None):
        self.spec = spec or FrameSpec.synthesis_22k()
        rng = np.random.default_rng(seed)
        d_stats = 2 * self.spec.n_mels
        self.projection = rng.standard_normal((SPEAKER_DIM, d_stats)) / np.sqrt(d_stats)

    def statistics(self, w: Waveform) -> np.ndarray:
        if w.sample_rate != self.spec.sample_rate:
            w = resample(w, self.spec.sample_rate)
        frames = compute_mel(w, self.spec).frames
        loudness = frames.mean(axis=1)
        active = frames[loudness >= loudness.max() - ACTIVITY_RANGE]
        mean, std = active.mean(axis=0), active.std(axis=0)
        return np.concatenate([mean - mean.mean(), std - std.mean()])

    def embed(self, source: Source) -> SpeakerEmbedding:
        if isinstance(source, UtteranceRecord):
            source = load_wav(source.path)
        if not isinstance(source, Waveform):
            raise ArgumentError("stats-pool provider needs audio (a waveform or manifest record)")
        vector = self.projection @ self.statistics(source)
        if not np.any(vector):
            raise ArgumentError("cannot embed a silent waveform")
        return SpeakerEmbedding(vector, self.source).normalized()


PROVIDERS: Dict[str, type] = {
    "lookup": LookupProvider,
    "external": ExternalProvider,
    "stats-pool": StatsPoolProvider,
}


def make_provider(kind: str, **kwargs) -> SpeakerEmbeddingProvider:
    if kind not in PROVIDERS:
        raise ArgumentError(f"unknown speaker provider {kind!r}; choose from {sorted(PROVIDERS)}")
    return PROVIDERS[kind](**kwargs)


def speaker_embedding(source: Source, provider: SpeakerEmbeddingProvider) -> SpeakerEmbedding:
    emb = provider.embed(source)
    norm = float(np.linalg.norm(emb.vector))
    assert abs(norm - 1.0) < 1e-6, norm
    return emb
