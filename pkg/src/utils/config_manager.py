"""
Configuration Manager
Key-value-tree configuration for every stage: built-in presets, YAML/JSON files,
--set overrides and typed accessors returning each module's config dataclass.
"""

import copy
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import yaml

from src.alignment.length_channel_aligner import AlignerConfig
from src.alignment.softdtw import SoftDtwConfig
from src.audio.frame_domains import FrameSpec
from src.collectors.synthetic_corpus import SynthSpec
from src.models.acoustic_model import AcousticConfig
from src.models.content_encoder import ContentEncoderConfig
from src.models.conformer_vae import Stage1LossWeights, VAEConfig
from src.models.vocoder import VocoderConfig
from src.utils.errors import ArgumentError, ConfigError

logger = logging.getLogger(__name__)

VERSION = "1.0.0"
PRESETS = ("toy", "full_scale", "desk_test")
COSINE_REFERENCES = ("paired_normal", "input_speaker")
SPEAKER_PROVIDERS = ("lookup", "external", "stats-pool")


def _toy_tree() -> Dict[str, Any]:
    return {
        "version": VERSION,
        "seed": 7,
        "frames": {"n_mels": 80, "fmin": 0.0, "fmax": 8000.0},
        "softdtw": {"gamma": 1.0, "metric": "sqeuclidean", "normalize_by_length": False},
        "encoder": {"d_content": 64, "n_layers": 2, "kernel": 3, "activation": "gelu", "dropout": 0.0},
        "vae": {
            "d_latent": 32,
            "d_model": 64,
            "n_encoder_blocks": 2,
            "n_decoder_blocks": 2,
            "n_heads": 4,
            "conv_kernel": 7,
            "dropout": 0.0,
            "lambda_kl": 1e-2,
            "lambda_n": 1.0,
            "lambda_dtw": 0.1,
        },
        "aligner": {"d_mid": 96, "n_feat": 48},
        "acoustic": {
            "d_model": 128,
            "n_encoder_blocks": 2,
            "n_decoder_blocks": 2,
            "n_heads": 2,
            "d_ff": 256,
            "ff_kernel": 9,
            "predictor_channels": 128,
            "predictor_kernel": 3,
            "dropout": 0.0,
            "pitch_weight": 0.1,
            "energy_weight": 0.1,
        },
        "vocoder": {"preset": "toy", "lambda_fm": 2.0, "lambda_mel": 45.0, "learning_rate": 2e-4},
        "corpus": {
            "n_speakers": 2,
            "utterances_per_speaker": 20,
            "whisper_energy_drop": 12.0,
            "whisper_formant_shift": 1.1,
            "tempo_ratio_range": [0.85, 1.15],
            "seed": 0,
        },
        "speaker": {"provider": "lookup", "directory": None, "seed": 0},
        "split": {"train_speakers": None, "eval_speakers": None, "eval_pairs_per_speaker": 2},
        "optim": {"learning_rate": 2e-4, "grad_clip": 1.0, "batch_size": 4, "betas": [0.9, 0.999]},
        "stage1": {"steps": 300, "log_interval": 50, "learning_rate": None},
        "stage2": {"steps": 300, "log_interval": 50, "learning_rate": None},
        "stage3": {"steps": 50, "log_interval": 10, "segment_frames": 32, "init_checkpoint": None},
        "evaluation": {
            "cosine_reference": "paired_normal",
            "embedder": "stats-pool",
            "griffin_lim_iters": 32,
            "include_input_baseline": True,
            "adapters": [],
        },
        "paths": {"data_dir": "data", "checkpoint_dir": "checkpoints", "output_dir": "outputs", "manifest": None},
        "logging": {"level": "INFO"},
    }


PRESET_OVERRIDES: Dict[str, Dict[str, Any]] = {
    "toy": {},
    "full_scale": {
        "encoder": {"d_content": 1280},
        "vae": {"d_latent": 256, "d_model": 256, "n_encoder_blocks": 4, "n_decoder_blocks": 4, "conv_kernel": 15},
        "aligner": {"d_mid": 1024, "n_feat": 768},
        "acoustic": {"d_model": 256, "n_encoder_blocks": 4, "n_decoder_blocks": 4, "d_ff": 1024, "predictor_channels": 256},
        "vocoder": {"preset": "full_scale"},
        "optim": {"batch_size": 16},
        "stage1": {"steps": 100000},
        "stage2": {"steps": 200000},
        "stage3": {"steps": 50000},
    },
    "desk_test": {
        "encoder": {"d_content": 16, "n_layers": 1},
        "vae": {"d_latent": 8, "d_model": 16, "n_encoder_blocks": 1, "n_decoder_blocks": 1, "n_heads": 2, "conv_kernel": 3},
        "aligner": {"d_mid": 16, "n_feat": 12},
        "acoustic": {
            "d_model": 32,
            "n_encoder_blocks": 1,
            "n_decoder_blocks": 1,
            "n_heads": 2,
            "d_ff": 64,
            "ff_kernel": 3,
            "predictor_channels": 32,
        },
        "vocoder": {"preset": "desk_test"},
        "corpus": {"utterances_per_speaker": 4},
        "split": {"eval_pairs_per_speaker": 1},
        "optim": {"learning_rate": 1e-3, "batch_size": 2},
        "stage1": {"steps": 20, "log_interval": 10},
        "stage2": {"steps": 20, "log_interval": 10},
        "stage3": {"steps": 4, "log_interval": 2, "segment_frames": 16},
        "evaluation": {"griffin_lim_iters": 8},
    },
}


def merge_trees(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; returns a new tree."""
    merged = copy.deepcopy(base)

    def merge_dicts(target: Dict[str, Any], changes: Dict[str, Any]) -> None:
        for key, value in changes.items():
            if key in target and isinstance(target[key], dict) and isinstance(value, dict):
                merge_dicts(target[key], value)
            else:
                target[key] = copy.deepcopy(value)

    merge_dicts(merged, update)
    return merged


def preset_tree(name: str) -> Dict[str, Any]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    return merge_trees(_toy_tree(), PRESET_OVERRIDES[name])


def parse_override(item: str) -> Tuple[str, Any]:
    """'a.b.c=value' -> ('a.b.c', value parsed as a YAML scalar or list)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.path=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse value of override {item!r}: {e}") from e
    return key, value


@dataclass
class OptimizerConfig:
    learning_rate: float = 2e-4
    grad_clip: float = 1.0
    batch_size: int = 4
    betas: Tuple[float, float] = (0.9, 0.999)
    steps: int = 300
    log_interval: int = 50


@dataclass
class RunConfig:
    """Typed view of one configuration tree."""

    seed: int
    spec16: FrameSpec
    spec22: FrameSpec
    softdtw: SoftDtwConfig
    encoder: ContentEncoderConfig
    vae: VAEConfig
    vae_weights: Stage1LossWeights
    aligner: AlignerConfig
    acoustic: AcousticConfig
    vocoder: VocoderConfig
    corpus: SynthSpec
    tree: Dict[str, Any] = field(default_factory=dict)

    def optimizer(self, stage: str) -> OptimizerConfig:
        optim = self.tree["optim"]
        section = self.tree[stage]
        lr = section.get("learning_rate") or optim["learning_rate"]
        return OptimizerConfig(
            learning_rate=float(lr),
            grad_clip=float(optim["grad_clip"]),
            batch_size=int(optim["batch_size"]),
            betas=tuple(optim["betas"]),
            steps=int(section["steps"]),
            log_interval=int(section["log_interval"]),
        )

    def section(self, name: str) -> Dict[str, Any]:
        return copy.deepcopy(self.tree.get(name, {}))


class ConfigManager:
    """Manages the configuration tree and its typed views."""

    def __init__(
        self,
        config_path: Optional[str] = None,
        preset: str = "toy",
        overrides: Iterable[str] = (),
    ):
        self.preset = preset
        self.default_config = preset_tree(preset)
        self.config = copy.deepcopy(self.default_config)
        self.config_path = Path(config_path) if config_path else None
        if self.config_path is not None:
            self.config = merge_trees(self.config, self._load_file(self.config_path))
        for item in overrides:
            key, value = parse_override(item)
            self.set(key, value)

    @staticmethod
    def _load_file(path: Path) -> Dict[str, Any]:
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                if path.suffix.lower() == ".json":
                    data = json.load(f)
                else:
                    data = yaml.safe_load(f)
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise ConfigError(f"could not parse config file {path}: {e}") from e
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a mapping at the top level")
        # files written by save_config wrap the tree
        if "config" in data and "metadata" in data:
            data = data["config"]
        preset = data.pop("preset", None)
        if preset:
            logger.debug("config file selects preset %s", preset)
            data = merge_trees(preset_tree(preset), data)
        return data

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get a configuration value using dot notation.

        Args:
            key: Configuration key (e.g., 'vae.lambda_kl')
            default: Default value if key not found

        Returns:
            Configuration value
        """
        value = self.config
        try:
            for k in key.split("."):
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key: str, value: Any) -> None:
        keys = key.split(".")
        node = self.config
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                node[k] = {}
            node = node[k]
        node[keys[-1]] = value

    def update(self, updates: Dict[str, Any]) -> None:
        for key, value in updates.items():
            self.set(key, value)

    def reset_to_default(self) -> None:
        self.config = copy.deepcopy(self.default_config)

    def save_config(self, path: str) -> str:
        """Write the current tree as YAML with a metadata header."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "metadata": {"last_updated": datetime.now().isoformat(), "version": self.config.get("version", VERSION)},
            "config": self.config,
        }
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(payload, f, sort_keys=False)
        return str(path)

    def validate_config(self) -> Dict[str, Any]:
        """
        Validate the current configuration.

        Returns:
            {'is_valid': bool, 'errors': [...], 'warnings': [...]}
        """
        validation = {"is_valid": True, "errors": [], "warnings": []}
        errors, warnings = validation["errors"], validation["warnings"]

        seed = self.get("seed")
        if seed is None:
            errors.append("Missing required field: seed")
        elif isinstance(seed, bool) or not isinstance(seed, int):
            errors.append(f"seed must be an integer, got {seed!r}")

        for stage in ("stage1", "stage2", "stage3"):
            steps = self.get(f"{stage}.steps")
            if not isinstance(steps, int) or steps < 0:
                errors.append(f"{stage}.steps must be a non-negative integer")
        lr = self.get("optim.learning_rate")
        if not isinstance(lr, (int, float)) or lr < 0:
            errors.append("optim.learning_rate must be >= 0")
        elif lr > 1e-2:
            warnings.append(f"optim.learning_rate {lr} is unusually high")
        if self.get("evaluation.cosine_reference") not in COSINE_REFERENCES:
            errors.append(f"evaluation.cosine_reference must be one of {COSINE_REFERENCES}")
        if self.get("evaluation.embedder") != "stats-pool":
            errors.append("evaluation.embedder must be stats-pool (the only provider that embeds audio)")
        if self.get("speaker.provider") not in SPEAKER_PROVIDERS:
            errors.append(f"speaker.provider must be one of {SPEAKER_PROVIDERS}")
        elif self.get("speaker.provider") == "external" and not self.get("speaker.directory"):
            errors.append("speaker.directory is required for the external provider")

        if not errors:
            try:
                self.run_config()
            except (ArgumentError, ConfigError, TypeError) as e:
                errors.append(str(e))

        validation["is_valid"] = not errors
        return validation

    def require_valid(self) -> None:
        result = self.validate_config()
        for warning in result["warnings"]:
            logger.warning(warning)
        if not result["is_valid"]:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(result["errors"]))

    def frame_specs(self) -> Tuple[FrameSpec, FrameSpec]:
        frames = self.get("frames")
        return FrameSpec.analysis_16k(**frames), FrameSpec.synthesis_22k(**frames)

    def softdtw_config(self) -> SoftDtwConfig:
        return SoftDtwConfig(**self.get("softdtw"))

    def encoder_config(self) -> ContentEncoderConfig:
        return ContentEncoderConfig(n_mels=self.get("frames.n_mels"), **self.get("encoder"))

    def vae_config(self) -> VAEConfig:
        vae = {k: v for k, v in self.get("vae").items() if not k.startswith("lambda_")}
        return VAEConfig(d_content=self.get("encoder.d_content"), **vae)

    def loss_weights(self) -> Stage1LossWeights:
        vae = self.get("vae")
        return Stage1LossWeights(vae["lambda_kl"], vae["lambda_n"], vae["lambda_dtw"])

    def aligner_config(self) -> AlignerConfig:
        spec16, spec22 = self.frame_specs()
        return AlignerConfig(d_in=self.get("encoder.d_content"), spec16=spec16, spec22=spec22, **self.get("aligner"))

    def acoustic_config(self) -> AcousticConfig:
        return AcousticConfig(n_feat=self.get("aligner.n_feat"), n_mels=self.get("frames.n_mels"), **self.get("acoustic"))

    def vocoder_config(self) -> VocoderConfig:
        section = dict(self.get("vocoder"))
        preset = section.pop("preset", "toy")
        builders = {"toy": VocoderConfig.toy, "desk_test": VocoderConfig.desk_test, "full_scale": VocoderConfig.full_scale}
        if preset not in builders:
            raise ConfigError(f"unknown vocoder preset {preset!r}")
        _, spec22 = self.frame_specs()
        return builders[preset](n_mels=spec22.n_mels, hop=spec22.hop, sample_rate=spec22.sample_rate, **section)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(**self.get("corpus"))

    def run_config(self) -> RunConfig:
        spec16, spec22 = self.frame_specs()
        return RunConfig(
            seed=int(self.get("seed")),
            spec16=spec16,
            spec22=spec22,
            softdtw=self.softdtw_config(),
            encoder=self.encoder_config(),
            vae=self.vae_config(),
            vae_weights=self.loss_weights(),
            aligner=self.aligner_config(),
            acoustic=self.acoustic_config(),
            vocoder=self.vocoder_config(),
            corpus=self.synth_spec(),
            tree=copy.deepcopy(self.config),
        )

    def paths(self) -> Dict[str, Optional[str]]:
        return dict(self.get("paths"))


def load_run_config(
    config_path: Optional[str] = None, overrides: List[str] = (), preset: str = "toy", seed: Optional[int] = None
) -> RunConfig:
    manager = ConfigManager(config_path, preset=preset, overrides=overrides)
    if seed is not None:
        manager.set("seed", seed)
    manager.require_valid()
    return manager.run_config()
