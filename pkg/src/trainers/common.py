"""
Shared training plumbing: seeding, optimizers, batch sampling, padding and the
speaker-embedding provider built from the run configuration.
"""

import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from src.collectors.manifest import UtteranceRecord, load_manifest, split_by_pairs, split_by_speakers
from src.collectors.speaker_embedding import SpeakerEmbeddingProvider, make_provider
from src.collectors.synthetic_corpus import write_synthetic_corpus
from src.utils.config_manager import OptimizerConfig, RunConfig
from src.utils.errors import ArgumentError

logger = logging.getLogger(__name__)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def make_optimizer(modules: Iterable[nn.Module], cfg: OptimizerConfig) -> torch.optim.Optimizer:
    params = [p for m in modules for p in m.parameters() if p.requires_grad]
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=tuple(cfg.betas))


def clipped_step(optimizer: torch.optim.Optimizer, loss: torch.Tensor, grad_clip: float) -> float:
    """Backward, clip the global gradient norm, step; returns the pre-clip norm."""
    optimizer.zero_grad()
    loss.backward()
    params = [p for group in optimizer.param_groups for p in group["params"]]
    norm = nn.utils.clip_grad_norm_(params, grad_clip)
    optimizer.step()
    return float(norm)


class BatchSampler:
    """Epoch-wise shuffled index batches from a seeded generator."""

    def __init__(self, n_items: int, batch_size: int, seed: int):
        if n_items < 1:
            raise ArgumentError("cannot sample batches from an empty dataset")
        self.n_items = n_items
        self.batch_size = min(batch_size, n_items)
        self.rng = np.random.default_rng(seed)
        self._order: List[int] = []

    def next_batch(self) -> List[int]:
        if len(self._order) < self.batch_size:
            self._order = self.rng.permutation(self.n_items).tolist()
        batch, self._order = self._order[: self.batch_size], self._order[self.batch_size :]
        return sorted(batch)


def pad_batch(items: Sequence[torch.Tensor], value: float = 0.0) -> Tuple[torch.Tensor, List[int]]:
    """List of (T_i, ...) tensors -> (B, T_max, ...) plus the original lengths."""
    lengths = [int(x.shape[0]) for x in items]
    return nn.utils.rnn.pad_sequence(list(items), batch_first=True, padding_value=value), lengths


def build_provider(run: RunConfig, speakers: Optional[Iterable[str]] = None) -> SpeakerEmbeddingProvider:
    """Provider named by speaker.provider; a lookup provider given speakers rejects any other id."""
    section = run.section("speaker")
    kind = section.get("provider", "lookup")
    if kind == "lookup":
        return make_provider(kind, speakers=speakers, seed=int(section.get("seed", 0)))
    if kind == "external":
        return make_provider(kind, directory=section.get("directory"))
    return make_provider(kind, seed=int(section.get("seed", 0)), spec=run.spec22)


@dataclass
class TrainingResult:
    stage: str
    checkpoint: str
    history: List[Dict[str, float]] = field(default_factory=list)
    history_path: Optional[str] = None

    @property
    def initial(self) -> Optional[Dict[str, float]]:
        return self.history[0] if self.history else None

    @property
    def final(self) -> Optional[Dict[str, float]]:
        return self.history[-1] if self.history else None


def log_progress(stage: str, step: int, total: int, losses: Dict[str, float]) -> None:
    parts = " ".join(f"{k}={v:.4f}" for k, v in losses.items() if k != "step")
    logger.info("%s step %d/%d %s", stage, step, total, parts)


def prepare_records(run: RunConfig, manifest: Optional[str] = None, show_progress: bool = False) -> List[UtteranceRecord]:
    """Load the configured manifest, writing the synthetic corpus first when none exists."""
    paths = run.section("paths")
    manifest = manifest or paths.get("manifest")
    if manifest is None:
        candidate = Path(paths.get("data_dir") or "data") / "manifest.jsonl"
        if not candidate.exists():
            logger.info("no manifest configured; generating the synthetic corpus in %s", candidate.parent)
            write_synthetic_corpus(run.corpus, candidate.parent, show_progress=show_progress)
        manifest = str(candidate)
    return load_manifest(manifest)


def training_split(run: RunConfig, records: Sequence[UtteranceRecord]) -> Tuple[List[UtteranceRecord], List[UtteranceRecord]]:
    """(train, held_out) by explicit speaker lists when given, else by held-out pairs per speaker."""
    split = run.section("split")
    train_speakers, eval_speakers = split.get("train_speakers"), split.get("eval_speakers")
    if train_speakers or eval_speakers:
        return split_by_speakers(records, train_speakers or [], eval_speakers or [])
    return split_by_pairs(records, int(split.get("eval_pairs_per_speaker", 0)))
