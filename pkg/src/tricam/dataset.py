"""In-memory datasets and the on-disk container.

Container layout (directory)::

    manifest.json   format/version, count, seed, scene config echo (incl. rig),
                    record layout, sha256 of samples.bin
    samples.bin     ``count`` fixed-size records, no header, little-endian

Record layout (packed, byte offsets in order, all little-endian)::

    scene_seed          uint64
    target_px           float64[2]            (px, py)
    eye_centers         float64[2, 3]         cm, eye-major
    view_uv             float64[2, 3, 2]      (eye, cam, u/v), -1 when undetected
    detected            uint8[2, 3]
    artifact_kind       uint8[2, 3]           0 none 1 blink 2 closed 3 reflection 4 occlusion
    artifact_intensity  float64[2, 3]
    images              uint16[2, 3, 20, 40]  row-major, value = round(I * 65535)
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .synthgen import IMG_H, IMG_W, N_CAMS, N_EYES, SceneConfig, sample_rng, synth_sample

FORMAT_NAME = "tricam-dataset"
FORMAT_VERSION = 1

RECORD_DTYPE = np.dtype([
    ("scene_seed", "<u8"),
    ("target_px", "<f8", (2,)),
    ("eye_centers", "<f8", (N_EYES, 3)),
    ("view_uv", "<f8", (N_EYES, N_CAMS, 2)),
    ("detected", "u1", (N_EYES, N_CAMS)),
    ("artifact_kind", "u1", (N_EYES, N_CAMS)),
    ("artifact_intensity", "<f8", (N_EYES, N_CAMS)),
    ("images", "<u2", (N_EYES, N_CAMS, IMG_H, IMG_W)),
])


class EmptyDatasetError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    view_uv: np.ndarray
    detected: np.ndarray
    images: np.ndarray
    target_px: np.ndarray
    eye_centers: np.ndarray
    artifact_kind: np.ndarray
    artifact_intensity: np.ndarray
    scene_seed: np.ndarray
    config: SceneConfig | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.target_px)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.view_uv[idx], self.detected[idx], self.images[idx], self.target_px[idx],
            self.eye_centers[idx], self.artifact_kind[idx], self.artifact_intensity[idx],
            self.scene_seed[idx], self.config, dict(self.meta),
        )

    def with_targets(self, target_px: np.ndarray) -> "Dataset":
        out = self.subset(np.arange(len(self)))
        out.target_px = np.asarray(target_px, dtype=np.float64).copy()
        return out

    @classmethod
    def concat(cls, parts: list["Dataset"]) -> "Dataset":
        first = parts[0]
        return cls(*(np.concatenate([getattr(p, name) for p in parts])
                     for name in ("view_uv", "detected", "images", "target_px", "eye_centers",
                                  "artifact_kind", "artifact_intensity", "scene_seed")),
                   config=first.config, meta=dict(first.meta))

    def to_records(self) -> np.ndarray:
        rec = np.zeros(len(self), dtype=RECORD_DTYPE)
        rec["scene_seed"] = self.scene_seed
        rec["target_px"] = self.target_px
        rec["eye_centers"] = self.eye_centers
        rec["view_uv"] = self.view_uv
        rec["detected"] = self.detected
        rec["artifact_kind"] = self.artifact_kind
        rec["artifact_intensity"] = self.artifact_intensity
        rec["images"] = np.round(self.images * 65535).astype("<u2")
        return rec

    @classmethod
    def from_records(cls, rec: np.ndarray, config=None, meta=None) -> "Dataset":
        return cls(
            view_uv=rec["view_uv"].astype(np.float64),
            detected=rec["detected"].astype(bool),
            images=rec["images"].astype(np.float64) / 65535.0,
            target_px=rec["target_px"].astype(np.float64),
            eye_centers=rec["eye_centers"].astype(np.float64),
            artifact_kind=rec["artifact_kind"].astype(np.uint8),
            artifact_intensity=rec["artifact_intensity"].astype(np.float64),
            scene_seed=rec["scene_seed"].astype(np.uint64),
            config=config,
            meta=meta or {},
        )


def generate(cfg: SceneConfig, n: int, seed: int, target_px=None) -> Dataset:
    """Generate ``n`` samples in memory; sample i uses rng seeded by (seed, i)."""
    if n < 1:
        raise EmptyDatasetError("empty-dataset: n must be at least 1")
    samples = []
    for i in range(n):
        tgt = None if target_px is None else target_px[i]
        samples.append(synth_sample(cfg, sample_rng(seed, i), scene_seed=i, target_px=tgt))
    return Dataset(
        view_uv=np.stack([s.view_uv for s in samples]),
        detected=np.stack([s.detected for s in samples]),
        images=np.stack([s.images for s in samples]),
        target_px=np.stack([s.target_px for s in samples]),
        eye_centers=np.stack([s.eye_centers for s in samples]),
        artifact_kind=np.stack([s.artifact_kind for s in samples]),
        artifact_intensity=np.stack([s.artifact_intensity for s in samples]),
        scene_seed=np.array([s.scene_seed for s in samples], dtype=np.uint64),
        config=cfg,
        meta={"seed": int(seed), "count": int(n)},
    )


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _layout_doc() -> list:
    return [[name, RECORD_DTYPE.fields[name][0].str, RECORD_DTYPE.fields[name][1]]
            for name in RECORD_DTYPE.names]


def write_dataset(ds: Dataset, out_dir, seed: int | None = None) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        bin_path = out / "samples.bin"
        tmp = out / "samples.bin.tmp"
        ds.to_records().tofile(tmp)
        os.replace(tmp, bin_path)
        manifest = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "count": len(ds),
            "seed": seed if seed is not None else ds.meta.get("seed"),
            "config": ds.config.to_dict() if ds.config is not None else None,
            "record_size": RECORD_DTYPE.itemsize,
            "record_layout": _layout_doc(),
            "byte_order": "little",
            "samples_sha256": sha256_file(bin_path),
        }
        text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        (out / "manifest.json.tmp").write_text(text)
        os.replace(out / "manifest.json.tmp", out / "manifest.json")
    except OSError as exc:
        raise OSError(f"failed writing dataset to {out}: {exc}") from exc
    return out


def gen_dataset(cfg: SceneConfig, n: int, seed: int, out_dir) -> Path:
    """Generate and write a dataset; the output is a pure function of (cfg, n, seed)."""
    return write_dataset(generate(cfg, n, seed), out_dir, seed=seed)


def load_dataset(path, verify: bool = True) -> Dataset:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"{path}: unreadable manifest: {exc}") from exc
    if manifest.get("format") != FORMAT_NAME or manifest.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: not a {FORMAT_NAME} v{FORMAT_VERSION} container")
    bin_path = path / "samples.bin"
    if not bin_path.exists():
        raise DatasetFormatError(f"{bin_path}: missing")
    size = bin_path.stat().st_size
    count = int(manifest["count"])
    if size != count * RECORD_DTYPE.itemsize:
        raise DatasetFormatError(
            f"{bin_path}: size {size} does not match {count} records of {RECORD_DTYPE.itemsize} bytes")
    if verify and sha256_file(bin_path) != manifest.get("samples_sha256"):
        raise DatasetFormatError(f"{bin_path}: checksum mismatch")
    rec = np.fromfile(bin_path, dtype=RECORD_DTYPE)
    cfg = SceneConfig.from_dict(manifest["config"]) if manifest.get("config") else None
    return Dataset.from_records(rec, cfg, {"seed": manifest.get("seed"), "count": count,
                                           "path": str(path)})
