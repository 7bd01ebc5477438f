"""Corpus manifests: JSON Lines, one record per clip.

Record schema:
    {"id": str, "wav_path": str, "sample_rate": int,
     "labels": [[start_frame, end_frame, label], ...],
     "domain": str, "provenance": "ground_truth" | "pseudo",
     "swap": {"seg_a": [s, e], "seg_b": [s, e], "seed": int, "threshold": float}}

``labels`` spans partition [0, n_frames) with label 1 = genuine, 0 =
manipulated. ``swap`` is present only on pseudo records. ``wav_path`` is
relative to the manifest's directory unless absolute.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .manipulation import FrameLabels

PROVENANCE_VALUES = ("ground_truth", "pseudo")


@dataclass
class ManifestRecord:
    id: str
    wav_path: str
    sample_rate: int
    labels: list[tuple[int, int, int]]
    domain: str
    provenance: str = "ground_truth"
    swap: dict | None = None

    def __post_init__(self):
        if self.provenance not in PROVENANCE_VALUES:
            raise ValueError(f"record {self.id!r}: bad provenance {self.provenance!r}")
        spans = [tuple(int(v) for v in s) for s in self.labels]
        pos = 0
        for start, end, lab in spans:
            if start != pos or end <= start or lab not in (0, 1):
                raise ValueError(f"record {self.id!r}: spans must partition frames, got {spans}")
            pos = end
        if pos <= 0:
            raise ValueError(f"record {self.id!r}: empty label spans")
        self.labels = spans
        if self.provenance == "pseudo" and self.swap is None:
            raise ValueError(f"record {self.id!r}: pseudo records need swap metadata")

    @property
    def n_frames(self) -> int:
        return self.labels[-1][1]

    def frame_labels(self) -> FrameLabels:
        arr = np.empty(self.n_frames, dtype=np.int8)
        for start, end, lab in self.labels:
            arr[start:end] = lab
        return FrameLabels(clip_id=self.id, labels=arr)

    @classmethod
    def from_frame_labels(
        cls,
        labels: FrameLabels,
        wav_path: str,
        sample_rate: int,
        domain: str,
        provenance: str = "ground_truth",
        swap: dict | None = None,
    ) -> "ManifestRecord":
        return cls(
            id=labels.clip_id,
            wav_path=wav_path,
            sample_rate=sample_rate,
            labels=[list(s) for s in labels.spans],
            domain=domain,
            provenance=provenance,
            swap=swap,
        )


def _record_to_obj(rec: ManifestRecord) -> dict:
    obj = {
        "id": rec.id,
        "wav_path": rec.wav_path,
        "sample_rate": rec.sample_rate,
        "labels": [list(s) for s in rec.labels],
        "domain": rec.domain,
        "provenance": rec.provenance,
    }
    if rec.swap is not None:
        obj["swap"] = rec.swap
    return obj


def write_manifest(path: str | Path, records: Sequence[ManifestRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(_record_to_obj(r), separators=(",", ":")) for r in records]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            records.append(
                ManifestRecord(
                    id=obj["id"],
                    wav_path=obj["wav_path"],
                    sample_rate=int(obj["sample_rate"]),
                    labels=[tuple(s) for s in obj["labels"]],
                    domain=obj.get("domain", ""),
                    provenance=obj.get("provenance", "ground_truth"),
                    swap=obj.get("swap"),
                )
            )
    seen = set()
    for rec in records:
        if rec.id in seen:
            raise ValueError(f"{path}: duplicate clip id {rec.id!r}")
        seen.add(rec.id)
    return records


def resolve_wav_path(manifest_path: str | Path, rec: ManifestRecord) -> Path:
    p = Path(rec.wav_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p
