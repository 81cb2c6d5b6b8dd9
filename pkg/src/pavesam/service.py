"""Operational surface: the HTTP inference service and batch box-to-mask conversion.

The service exploits the backbone split: an image is encoded once, cached
by content hash (LRU over a byte budget, single-flight per image), and
prompted many times. Box coordinates on the wire are
[x_min, y_min, x_max, y_max] in original-image pixels; masks are returned
run-length encoded (row-major, alternating run lengths starting with the
zero run) or as base64 little-endian float32 probabilities.
"""

from __future__ import annotations

import base64
import hashlib
import io
import logging
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from . import dataio
from .core import AnnotatedInstance, BinaryMask, BoundingBox
from .dataio import DatasetManifest, ManifestRecord
from .evaluation import binarize
from .inference import EmbeddedImage, embed_image, predict_box
from .model import load_backbone

log = logging.getLogger(__name__)

DEFAULT_CACHE_BUDGET = 512 * 1024 * 1024
DEFAULT_MAX_PIXELS = 32_000_000


# ---------------------------------------------------------------------------
# Run-length encoding


def rle_encode(mask: BinaryMask) -> dict:
    """Row-major alternating run lengths, starting with the zero run."""
    arr = np.asarray(mask, dtype=np.uint8).ravel()
    if arr.size == 0:
        raise ValueError("cannot encode an empty mask")
    changes = np.flatnonzero(np.diff(arr)) + 1
    boundaries = np.concatenate([[0], changes, [arr.size]])
    counts = np.diff(boundaries).tolist()
    if arr[0] == 1:  # canonical form starts with the count of zeros
        counts = [0] + counts
    return {"size": [int(mask.shape[0]), int(mask.shape[1])], "counts": counts}


def rle_decode(payload: dict) -> BinaryMask:
    height, width = payload["size"]
    counts = payload["counts"]
    total = sum(counts)
    if total != height * width:
        raise ValueError(f"run lengths sum to {total}, expected {height * width}")
    flat = np.zeros(total, dtype=np.uint8)
    position = 0
    value = 0
    for run in counts:
        if value:
            flat[position: position + run] = 1
        position += run
        value ^= 1
    return flat.reshape(height, width)


# ---------------------------------------------------------------------------
# Embedding cache (content-addressed, LRU by bytes, single-flight)


@dataclass
class EmbeddingCacheEntry:
    image_id: str
    embedded: EmbeddedImage
    created_at: float
    size_bytes: int


@dataclass
class CacheStats:
    encodes: int = 0
    hits: int = 0


class EmbeddingCache:
    """LRU over a byte budget; concurrent identical requests encode once."""

    def __init__(self, budget_bytes: int = DEFAULT_CACHE_BUDGET) -> None:
        self.budget_bytes = budget_bytes
        self.stats = CacheStats()
        self._entries: OrderedDict[str, EmbeddingCacheEntry] = OrderedDict()
        self._inflight: dict[str, threading.Event] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def total_bytes(self) -> int:
        with self._lock:
            return sum(e.size_bytes for e in self._entries.values())

    def get(self, image_id: str) -> EmbeddingCacheEntry | None:
        with self._lock:
            entry = self._entries.get(image_id)
            if entry is not None:
                self._entries.move_to_end(image_id)
            return entry

    def get_or_encode(self, image_id: str, loader) -> tuple[EmbeddingCacheEntry, bool]:
        """Return (entry, was_cache_hit); `loader` runs at most once per miss."""
        while True:
            with self._lock:
                entry = self._entries.get(image_id)
                if entry is not None:
                    self._entries.move_to_end(image_id)
                    self.stats.hits += 1
                    return entry, True
                event = self._inflight.get(image_id)
                if event is None:
                    event = threading.Event()
                    self._inflight[image_id] = event
                    break
            event.wait()  # another thread is encoding this image
        try:
            with self._lock:
                self.stats.encodes += 1
            embedded = loader()
            entry = EmbeddingCacheEntry(
                image_id=image_id,
                embedded=embedded,
                created_at=time.time(),
                size_bytes=embedded.embedding.size_bytes,
            )
            with self._lock:
                self._entries[image_id] = entry
                self._evict_locked()
            return entry, False
        finally:
            with self._lock:
                self._inflight.pop(image_id, None)
            event.set()

    def _evict_locked(self) -> None:
        # newest entry always survives, even if it alone exceeds the budget
        while (
            len(self._entries) > 1
            and sum(e.size_bytes for e in self._entries.values()) > self.budget_bytes
        ):
            self._entries.popitem(last=False)


# ---------------------------------------------------------------------------
# HTTP app


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


class SegmentRequest(BaseModel):
    image_id: str
    boxes: list
    threshold: float = 0.5
    format: str = "rle"


def create_app(
    bundle,
    cache_budget: int = DEFAULT_CACHE_BUDGET,
    max_pixels: int = DEFAULT_MAX_PIXELS,
) -> FastAPI:
    app = FastAPI(title="pavesam", docs_url=None, redoc_url=None)
    cache = EmbeddingCache(cache_budget)
    app.state.cache = cache
    app.state.bundle = bundle

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return _error(422, "invalid_request", str(exc.errors()[:3]))

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "kind": bundle.kind,
            "config_hash": bundle.config_hash(),
            "cache_entries": len(cache),
        }

    @app.post("/images")
    async def upload_image(file: UploadFile):
        raw = await file.read()
        image_id = hashlib.sha256(raw).hexdigest()
        try:
            with Image.open(io.BytesIO(raw)) as img:
                image = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except Exception:
            return _error(400, "undecodable_image", "upload is not a decodable image")
        if image.shape[0] * image.shape[1] > max_pixels:
            return _error(
                400,
                "image_too_large",
                f"{image.shape[0]}x{image.shape[1]} exceeds the {max_pixels}-pixel limit",
            )
        entry, hit = cache.get_or_encode(image_id, lambda: embed_image(bundle, image))
        return {
            "image_id": image_id,
            "width": entry.embedded.width,
            "height": entry.embedded.height,
            "cached": hit,
        }

    @app.post("/segment")
    def segment(request: SegmentRequest):
        entry = cache.get(request.image_id)
        if entry is None:
            return _error(404, "unknown_image", f"image_id {request.image_id} not cached")
        if not request.boxes:
            return _error(400, "empty_boxes", "request contains no boxes")
        if request.format not in ("rle", "prob"):
            return _error(400, "bad_format", "format must be 'rle' or 'prob'")
        if not 0.0 < request.threshold < 1.0:
            return _error(400, "bad_threshold", "threshold must be in (0, 1)")
        masks: list[dict] = []
        iou_scores: list[float | None] = []
        for raw_box in request.boxes:
            try:
                coords = [int(v) for v in raw_box]
                if len(coords) != 4:
                    raise TypeError
            except (TypeError, ValueError):
                masks.append({"box": raw_box, "error": {
                    "code": "invalid_box",
                    "message": "expected [x_min, y_min, x_max, y_max] integers"}})
                iou_scores.append(None)
                continue
            try:
                box = BoundingBox(*coords)
                prob, score = predict_box(bundle, entry.embedded, box)
            except ValueError as exc:
                masks.append({"box": raw_box, "error": {
                    "code": "box_out_of_bounds", "message": str(exc)}})
                iou_scores.append(None)
                continue
            result = {"box": list(raw_box), "format": request.format,
                      "size": [entry.embedded.height, entry.embedded.width]}
            if request.format == "rle":
                result["counts"] = rle_encode(binarize(prob, request.threshold))["counts"]
            else:
                result["values"] = base64.b64encode(
                    prob.astype("<f4").tobytes()
                ).decode("ascii")
            masks.append(result)
            iou_scores.append(score)
        return {"image_id": request.image_id, "masks": masks, "iou_scores": iou_scores}

    return app


def serve(
    checkpoint: str,
    host: str = "127.0.0.1",
    port: int = 8000,
    cache_budget: int = DEFAULT_CACHE_BUDGET,
    max_pixels: int = DEFAULT_MAX_PIXELS,
    device: str = "cpu",
) -> None:
    """Blocking server entry point; fails fast on a bad checkpoint or busy port."""
    import uvicorn

    bundle = load_backbone(checkpoint)
    if device != "cpu":
        bundle.to_device(device)
    app = create_app(bundle, cache_budget=cache_budget, max_pixels=max_pixels)
    try:
        uvicorn.run(app, host=host, port=port, log_level="info")
    except OSError as exc:
        raise SystemExit(f"cannot bind {host}:{port}: {exc}") from exc


# ---------------------------------------------------------------------------
# Batch conversion: box-annotated manifest -> mask dataset


@dataclass
class ConvertSummary:
    images: int = 0
    masks_written: int = 0
    filtered_low_iou: int = 0
    empty_predictions: int = 0
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "images": self.images,
            "masks_written": self.masks_written,
            "filtered_low_iou": self.filtered_low_iou,
            "empty_predictions": self.empty_predictions,
            "errors": list(self.errors),
        }


def convert_dataset(
    manifest: DatasetManifest,
    bundle,
    out_dir: str | Path,
    threshold: float = 0.5,
    min_iou: float | None = None,
) -> ConvertSummary:
    """Generate one mask file per instance plus a reloadable output manifest.

    Every input instance needs a box (no ground-truth masks required). The
    model's IoU-head score is recorded per instance so low-confidence
    pseudo-masks can be filtered here (min_iou) or downstream.
    """
    out_dir = Path(out_dir)
    mask_dir = out_dir / "masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    summary = ConvertSummary()
    out_records: list[ManifestRecord] = []
    scores: dict[str, float] = {}
    for record in manifest.records:
        summary.images += 1
        try:
            image = dataio.load_image(record.image_path)
            embedded = embed_image(bundle, image)
        except Exception as exc:  # noqa: BLE001 - skip unreadable images
            summary.errors.append(f"{record.id}: {exc}")
            log.error("skipping %s: %s", record.id, exc)
            continue
        instances = []
        for j, inst in enumerate(record.instances):
            prob, score = predict_box(bundle, embedded, inst.box)
            if min_iou is not None and score < min_iou:
                summary.filtered_low_iou += 1
                continue
            mask = binarize(prob, threshold)
            if not mask.any():
                summary.empty_predictions += 1
                continue
            mask_path = mask_dir / f"{_safe_name(record.id)}_{j}.png"
            dataio.write_mask(mask_path, mask)
            instances.append(
                AnnotatedInstance(
                    inst.distress_class,
                    dataio.box_from_binary_mask(mask),
                    mask_path=str(mask_path),
                )
            )
            scores[f"{record.id}:{j}"] = score
            summary.masks_written += 1
        out_records.append(
            ManifestRecord(record.id, record.image_path, record.width, record.height,
                           record.split, tuple(instances))
        )
    dataio.save_manifest(
        DatasetManifest(tuple(out_records), source_kind="mask_directory"),
        out_dir / "manifest.jsonl",
    )
    import json

    with open(out_dir / "iou_scores.json", "w") as fh:
        json.dump(scores, fh, sort_keys=True, indent=1)
    return summary


def _safe_name(record_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in record_id)
