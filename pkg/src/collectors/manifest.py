"""
Manifest Collector
Loads line-delimited utterance manifests for paired whisper/normal corpora and
enforces the pairing and stage data policies.
"""

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from src.utils.errors import ArgumentError, DataPolicyError, ManifestError, PairingError

logger = logging.getLogger(__name__)

WHISPER = "whisper"
NORMAL = "normal"
STYLES = (WHISPER, NORMAL)
REQUIRED_FIELDS = ("utt_id", "pair_id", "speaker", "style", "path")


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    pair_id: str
    speaker: str
    style: str
    path: str
    text: Optional[str] = None
    sample_rate: int = 22050

    def to_dict(self) -> Dict:
        return asdict(self)


def _parse_line(line: str, lineno: int, base: Path, errors: List[str]) -> Optional[UtteranceRecord]:
    try:
        data = json.loads(line)
    except json.JSONDecodeError as e:
        errors.append(f"line {lineno}: invalid JSON ({e.msg})")
        return None
    if not isinstance(data, dict):
        errors.append(f"line {lineno}: expected an object")
        return None
    missing = [k for k in REQUIRED_FIELDS if k not in data]
    if missing:
        errors.append(f"line {lineno}: missing fields {', '.join(missing)}")
        return None
    if data["style"] not in STYLES:
        errors.append(f"line {lineno}: style must be one of {STYLES}, got {data['style']!r}")
        return None
    path = Path(data["path"])
    if not path.is_absolute():
        path = base / path
    return UtteranceRecord(
        utt_id=str(data["utt_id"]),
        pair_id=str(data["pair_id"]),
        speaker=str(data["speaker"]),
        style=data["style"],
        path=str(path),
        text=data.get("text"),
        sample_rate=int(data.get("sample_rate", 22050)),
    )


def load_manifest(
    path: Union[str, Path], require_pairs: bool = True, check_files: bool = True
) -> List[UtteranceRecord]:
    """
    Load and validate a manifest.

    Args:
        path: manifest.jsonl; relative audio paths resolve against its directory
        require_pairs: every pair_id must have one whisper and one normal record
        check_files: report records whose audio file does not exist

    Returns:
        Records sorted by (pair_id, style)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    errors: List[str] = []
    records: List[UtteranceRecord] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            record = _parse_line(line, lineno, path.parent, errors)
            if record is not None:
                records.append(record)

    seen_keys = set()
    seen_utts = set()
    for r in records:
        key = (r.pair_id, r.style)
        if key in seen_keys:
            errors.append(f"pair {r.pair_id}: duplicate {r.style} record")
        seen_keys.add(key)
        if r.utt_id in seen_utts:
            errors.append(f"utterance {r.utt_id}: duplicate utt_id")
        seen_utts.add(r.utt_id)
        if check_files and not Path(r.path).exists():
            errors.append(f"utterance {r.utt_id}: audio file missing ({r.path})")

    if require_pairs:
        styles: Dict[str, set] = defaultdict(set)
        for r in records:
            styles[r.pair_id].add(r.style)
        for pair_id, found in sorted(styles.items()):
            for style in STYLES:
                if style not in found:
                    errors.append(f"pair {pair_id}: no {style} record")

    if errors:
        raise ManifestError(f"{path}: {len(errors)} manifest error(s)", errors)
    records.sort(key=lambda r: (r.pair_id, r.style))
    logger.debug("loaded %d records from %s", len(records), path)
    return records


def pairs(records: Iterable[UtteranceRecord]) -> List[Tuple[UtteranceRecord, UtteranceRecord]]:
    """(whisper, normal) tuples ordered by pair_id; incomplete pairs raise PairingError."""
    by_pair: Dict[str, Dict[str, UtteranceRecord]] = defaultdict(dict)
    for r in records:
        by_pair[r.pair_id][r.style] = r
    out = []
    for pair_id in sorted(by_pair):
        entry = by_pair[pair_id]
        if WHISPER not in entry or NORMAL not in entry:
            raise PairingError(f"pair {pair_id} is incomplete: has {sorted(entry)}")
        out.append((entry[WHISPER], entry[NORMAL]))
    return out


def normal_only(records: Iterable[UtteranceRecord]) -> List[UtteranceRecord]:
    return [r for r in records if r.style == NORMAL]


def assert_normal_only(records: Iterable[UtteranceRecord]) -> None:
    for r in records:
        if r.style != NORMAL:
            raise DataPolicyError(f"utterance {r.utt_id} is {r.style} speech; this stage trains on normal speech only")


def split_by_speakers(
    records: Sequence[UtteranceRecord], train_speakers: Sequence[str], eval_speakers: Sequence[str]
) -> Tuple[List[UtteranceRecord], List[UtteranceRecord]]:
    """Partition records by explicit speaker lists; records of unlisted speakers are dropped."""
    overlap = set(train_speakers) & set(eval_speakers)
    if overlap:
        raise ArgumentError(f"speakers in both train and eval: {sorted(overlap)}")
    known = {r.speaker for r in records}
    unknown = (set(train_speakers) | set(eval_speakers)) - known
    if unknown:
        raise ArgumentError(f"speakers not in manifest: {sorted(unknown)}")
    train = [r for r in records if r.speaker in set(train_speakers)]
    held_out = [r for r in records if r.speaker in set(eval_speakers)]
    dropped = len(records) - len(train) - len(held_out)
    if dropped:
        logger.info("split_by_speakers: %d records belong to neither list", dropped)
    return train, held_out


def split_by_pairs(
    records: Sequence[UtteranceRecord], eval_per_speaker: int
) -> Tuple[List[UtteranceRecord], List[UtteranceRecord]]:
    """Hold out the last `eval_per_speaker` pairs of every speaker (same speakers in both sets)."""
    by_speaker: Dict[str, List[str]] = defaultdict(list)
    for r in records:
        if r.pair_id not in by_speaker[r.speaker]:
            by_speaker[r.speaker].append(r.pair_id)
    held = set()
    for ids in by_speaker.values():
        if eval_per_speaker > 0:
            held.update(sorted(ids)[-eval_per_speaker:])
    train = [r for r in records if r.pair_id not in held]
    return train, [r for r in records if r.pair_id in held]
