"""
External Metric Adapters
Process-boundary contracts for heavyweight scorers (MOS predictors, ASR-based CER).
A command adapter runs a tool with the WAV paths appended and reads one scalar
per line; a service adapter POSTs the paths to an HTTP endpoint. Failures are
logged and produce no scores.
"""

import json
import logging
import subprocess
from typing import Dict, List, Optional, Sequence

import requests

from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)


class MetricAdapter:
    """Scores a batch of WAV files; returns {path: value} for the files it could score."""

    def __init__(self, name: str):
        self.name = name

    def score(self, wav_paths: Sequence[str], texts: Optional[Sequence[Optional[str]]] = None) -> Dict[str, float]:
        raise NotImplementedError

    def _parse(self, wav_paths: Sequence[str], values: List) -> Dict[str, float]:
        if len(values) != len(wav_paths):
            logger.warning("%s: expected %d scores, got %d; dropping metric", self.name, len(wav_paths), len(values))
            return {}
        try:
            return {path: float(v) for path, v in zip(wav_paths, values)}
        except (TypeError, ValueError) as e:
            logger.warning("%s: unparseable score (%s); dropping metric", self.name, e)
            return {}


class CommandMetricAdapter(MetricAdapter):
    """
    Runs `command + wav_paths` and parses stdout as one float per line.

    When texts are given and `text_flag` is set, each reference text is passed
    as `text_flag <text>` before the paths (CER scorers need the transcript).
    """

    def __init__(self, name: str, command: Sequence[str], timeout: float = 600.0, text_flag: Optional[str] = None):
        super().__init__(name)
        if not command:
            raise ConfigError(f"metric adapter {name!r} has an empty command")
        self.command = list(command)
        self.timeout = timeout
        self.text_flag = text_flag

    def score(self, wav_paths, texts=None):
        if not wav_paths:
            return {}
        args = list(self.command)
        if self.text_flag and texts:
            for text in texts:
                args += [self.text_flag, text or ""]
        args += [str(p) for p in wav_paths]
        try:
            result = subprocess.run(args, capture_output=True, text=True, timeout=self.timeout, check=True)
        except (OSError, subprocess.SubprocessError) as e:
            logger.warning("%s: command failed (%s); metric omitted", self.name, e)
            return {}
        lines = [line.strip() for line in result.stdout.splitlines() if line.strip()]
        return self._parse(wav_paths, lines)


class ServiceMetricAdapter(MetricAdapter):
    """POSTs {"paths": [...], "texts": [...]} to `url`; expects {"scores": [...]} back."""

    def __init__(self, name: str, url: str, timeout: float = 60.0):
        super().__init__(name)
        if not url:
            raise ConfigError(f"metric adapter {name!r} has no url")
        self.url = url
        self.timeout = timeout

    def score(self, wav_paths, texts=None):
        if not wav_paths:
            return {}
        payload = {"paths": [str(p) for p in wav_paths], "texts": list(texts) if texts else None}
        try:
            response = requests.post(self.url, json=payload, timeout=self.timeout)
            response.raise_for_status()
            scores = response.json().get("scores")
        except (requests.exceptions.RequestException, json.JSONDecodeError, AttributeError) as e:
            logger.warning("%s: service call failed (%s); metric omitted", self.name, e)
            return {}
        if not isinstance(scores, list):
            logger.warning("%s: response has no score list; metric omitted", self.name)
            return {}
        return self._parse(wav_paths, scores)


def build_adapters(entries: Sequence[Dict]) -> List[MetricAdapter]:
    """
    Adapters from the `evaluation.adapters` config list.

    Each entry: {name, kind: command|service, command: [...] | url: ..., timeout?, text_flag?}
    """
    adapters: List[MetricAdapter] = []
    for entry in entries or []:
        name, kind = entry.get("name"), entry.get("kind", "command")
        if not name:
            raise ConfigError(f"metric adapter entry without a name: {entry}")
        if kind == "command":
            adapters.append(
                CommandMetricAdapter(
                    name, entry.get("command") or [], float(entry.get("timeout", 600)), entry.get("text_flag")
                )
            )
        elif kind == "service":
            adapters.append(ServiceMetricAdapter(name, entry.get("url", ""), float(entry.get("timeout", 60))))
        else:
            raise ConfigError(f"metric adapter {name!r}: unknown kind {kind!r}")
    return adapters
