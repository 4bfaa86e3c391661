"""
Data Manager
Handles checkpoints, training histories, predicted-mel caches and metric records
for the whisper-to-speech pipeline.
"""

import json
import logging
import os
import tempfile
from dataclasses import asdict
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import torch

from src.audio.features import read_feature_file, write_feature_file
from src.audio.frame_domains import FrameSpec, MelSpectrogram
from src.utils.errors import DependencyError, FormatError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
STAGE_FILES = {
    "stage1": "stage1.pt",
    "stage2": "stage2.pt",
    "stage3": "stage3.pt",
}

PathLike = Union[str, Path]


def _atomic_write(path: Path, write) -> None:
    """Write through a temp file in the target directory, then rename over `path`."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


class DataManager:
    """Manages data persistence and loading operations."""

    def __init__(self, checkpoint_dir: PathLike = "checkpoints"):
        self.checkpoint_dir = Path(checkpoint_dir)
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)

    def checkpoint_path(self, stage: str) -> Path:
        return self.checkpoint_dir / STAGE_FILES.get(stage, f"{stage}.pt")

    def has_checkpoint(self, stage: str) -> bool:
        return self.checkpoint_path(stage).exists()

    def save_checkpoint(
        self,
        stage: str,
        modules: Dict[str, torch.nn.Module],
        config: Dict[str, Any],
        step: int = 0,
        optimizers: Optional[Dict[str, torch.optim.Optimizer]] = None,
        path: Optional[PathLike] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> str:
        """
        Save module parameters as one checkpoint container.

        Args:
            stage: stage name recorded in the container
            modules: name -> module whose state_dict is stored
            config: configuration tree echoed into the checkpoint
            step: training steps taken
            optimizers: optional name -> optimizer whose state is stored
            path: override for the default <checkpoint_dir>/<stage>.pt
            metadata: plain values (strings, numbers, lists) stored alongside the parameters

        Returns:
            Path to the saved file
        """
        path = Path(path) if path else self.checkpoint_path(stage)
        payload = {
            "format_version": FORMAT_VERSION,
            "stage": stage,
            "config": config,
            "params": {name: m.state_dict() for name, m in modules.items()},
            "optimizer": {name: o.state_dict() for name, o in (optimizers or {}).items()},
            "step": int(step),
            "metadata": dict(metadata or {}),
            "created_at": datetime.now().isoformat(),
        }
        _atomic_write(path, lambda tmp: torch.save(payload, tmp))
        logger.info("saved %s checkpoint to %s", stage, path)
        return str(path)

    def load_checkpoint(self, stage: str, path: Optional[PathLike] = None) -> Dict[str, Any]:
        path = Path(path) if path else self.checkpoint_path(stage)
        if not path.exists():
            raise DependencyError(f"{stage} checkpoint not found at {path}; run {stage.replace('stage', 'train-stage')} first")
        try:
            payload = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as e:
            raise FormatError(f"could not read checkpoint {path}: {e}") from e
        if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"{path} is not a version-{FORMAT_VERSION} checkpoint")
        if payload.get("stage") != stage:
            raise FormatError(f"{path} holds a {payload.get('stage')} checkpoint, expected {stage}")
        return payload

    @staticmethod
    def restore(payload: Dict[str, Any], modules: Dict[str, torch.nn.Module]) -> None:
        """Load stored state dicts into the given modules."""
        params = payload["params"]
        for name, module in modules.items():
            if name not in params:
                raise FormatError(f"checkpoint has no parameters for {name!r}; has {sorted(params)}")
            try:
                module.load_state_dict(params[name])
            except RuntimeError as e:
                raise FormatError(f"checkpoint parameters for {name!r} do not fit the configured model: {e}") from e

    def save_history(self, history: List[Dict[str, float]], filepath: PathLike, stage: str) -> str:
        """Save a per-step loss history to JSON with a metadata header."""
        filepath = Path(filepath)
        data = {
            "metadata": {
                "generated_at": datetime.now().isoformat(),
                "stage": stage,
                "total_steps": len(history),
                "version": "1.0.0",
            },
            "history": history,
        }

        def write(tmp):
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump(data, f, indent=2)

        _atomic_write(filepath, write)
        return str(filepath)

    @staticmethod
    def load_history(filepath: PathLike) -> List[Dict[str, float]]:
        filepath = Path(filepath)
        if not filepath.exists():
            raise FileNotFoundError(f"History file not found: {filepath}")
        with open(filepath, "r", encoding="utf-8") as f:
            data = json.load(f)
        return data["history"] if isinstance(data, dict) and "history" in data else data

    def history_path(self, stage: str) -> Path:
        return self.checkpoint_dir / f"{stage}_history.json"

    def mel_cache_dir(self) -> Path:
        return self.checkpoint_dir / "predicted_mels"

    def save_cached_mel(self, mel: MelSpectrogram, utt_id: str) -> str:
        """Store a mel as W2SF with a JSON sidecar carrying provenance and frame spec."""
        cache = self.mel_cache_dir()
        path = write_feature_file(mel.frames, cache / f"{utt_id}.w2sf")
        sidecar = {"utt_id": utt_id, "provenance": mel.provenance, "spec": asdict(mel.spec)}
        with open(cache / f"{utt_id}.json", "w", encoding="utf-8") as f:
            json.dump(sidecar, f)
        return path

    def load_cached_mel(self, utt_id: str) -> MelSpectrogram:
        cache = self.mel_cache_dir()
        sidecar_path = cache / f"{utt_id}.json"
        if not sidecar_path.exists():
            raise DependencyError(f"no cached mel for {utt_id} in {cache}")
        with open(sidecar_path, encoding="utf-8") as f:
            sidecar = json.load(f)
        frames = read_feature_file(cache / f"{utt_id}.w2sf").astype(np.float64)
        return MelSpectrogram(frames, FrameSpec(**sidecar["spec"]), sidecar["provenance"], utt_id=utt_id)

    @staticmethod
    def write_records(records: Iterable[Dict[str, Any]], filepath: PathLike) -> str:
        """Write JSON lines, one record per line."""
        filepath = Path(filepath)
        filepath.parent.mkdir(parents=True, exist_ok=True)
        with open(filepath, "w", encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps(record, ensure_ascii=False) + "\n")
        return str(filepath)

    @staticmethod
    def read_records(filepath: PathLike) -> List[Dict[str, Any]]:
        with open(filepath, encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]

    def get_data_summary(self) -> Dict[str, Any]:
        """Which checkpoints and histories exist in the checkpoint directory."""
        summary = {"checkpoint_dir": str(self.checkpoint_dir), "checkpoints": {}, "histories": {}}
        for stage in STAGE_FILES:
            path = self.checkpoint_path(stage)
            if path.exists():
                summary["checkpoints"][stage] = {
                    "path": str(path),
                    "size_bytes": path.stat().st_size,
                    "modified": datetime.fromtimestamp(path.stat().st_mtime).isoformat(),
                }
            if self.history_path(stage).exists():
                summary["histories"][stage] = str(self.history_path(stage))
        cache = self.mel_cache_dir()
        summary["cached_mels"] = len(list(cache.glob("*.w2sf"))) if cache.exists() else 0
        return summary
