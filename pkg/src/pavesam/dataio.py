"""Dataset ingestion, rasterization, box extraction, and geometric preprocessing.

Manifest format (line-delimited JSON, one record per line):

    {"image_path": "imgs/a.png", "split": "train", "instances": [
        {"class": "transverse", "polygon": [[x, y], [x, y], [x, y]]},
        {"class": "patch", "mask_path": "masks/a_1.png"},
        {"class": null, "box": [x_min, y_min, x_max, y_max]}
    ]}

Paths are resolved relative to the manifest file. `split` defaults to
"train". Mask files are single-channel 8-bit images, foreground 255,
background 0. An optional integer `component` on a mask instance selects
one 8-connected foreground component of a shared whole-image mask.

Rounding: everywhere a real coordinate becomes a pixel index, the mode is
round-half-away-from-zero.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .core import AnnotatedInstance, BinaryMask, BoundingBox, DistressClass

log = logging.getLogger(__name__)

EIGHT_CONNECTED = np.ones((3, 3), dtype=np.uint8)
MIN_COMPONENT_PIXELS = 20  # Crack500 components below this are dropped as noise


def round_half_away(values):
    """Round half away from zero, elementwise, to int64."""
    arr = np.asarray(values, dtype=np.float64)
    out = np.sign(arr) * np.floor(np.abs(arr) + 0.5)
    return out.astype(np.int64) if arr.ndim else int(out)


# ---------------------------------------------------------------------------
# Resizing / padding to the backbone input size


@dataclass(frozen=True)
class ResizeTransform:
    """Mapping from an original image to the padded square model input."""

    scale: float
    pad_right: int
    pad_bottom: int
    target: int
    src_height: int
    src_width: int

    @property
    def content_height(self) -> int:
        return self.target - self.pad_bottom

    @property
    def content_width(self) -> int:
        return self.target - self.pad_right


def _sample_coords(out_size: int, src_size: int) -> np.ndarray:
    # pixel-center mapping: out center i+0.5 -> src coordinate
    return (np.arange(out_size, dtype=np.float64) + 0.5) * (src_size / out_size) - 0.5


def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a (H,W) or (H,W,C) array; returns float64."""
    arr = np.asarray(src, dtype=np.float64)
    if arr.shape[0] == out_h and arr.shape[1] == out_w:
        return arr.copy()
    ys = _sample_coords(out_h, arr.shape[0])
    xs = _sample_coords(out_w, arr.shape[1])
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, arr.shape[0] - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, arr.shape[1] - 1)
    y1 = np.clip(y0 + 1, 0, arr.shape[0] - 1)
    x1 = np.clip(x0 + 1, 0, arr.shape[1] - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    if arr.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = arr[y0][:, x0] * (1 - wx) + arr[y0][:, x1] * wx
    bot = arr[y1][:, x0] * (1 - wx) + arr[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_nearest(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resample of a 2-D array (masks must stay binary)."""
    arr = np.asarray(src)
    ys = np.clip(round_half_away(_sample_coords(out_h, arr.shape[0])), 0, arr.shape[0] - 1)
    xs = np.clip(round_half_away(_sample_coords(out_w, arr.shape[1])), 0, arr.shape[1] - 1)
    return arr[ys][:, xs]


def resize_and_pad(
    image: np.ndarray, target: int = 1024
) -> tuple[np.ndarray, ResizeTransform]:
    """Scale the longest side to `target`, pad the short side with zeros.

    Returns the target x target x 3 uint8 image and the recorded transform.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
    h, w = image.shape[:2]
    if h <= 0 or w <= 0:
        raise ValueError("image dimensions must be positive")
    scale = target / max(h, w)
    if h >= w:
        content_h, content_w = target, int(round_half_away(w * scale))
    else:
        content_h, content_w = int(round_half_away(h * scale)), target
    content = np.clip(round_half_away(resize_bilinear(image, content_h, content_w)), 0, 255)
    canvas = np.zeros((target, target, 3), dtype=np.uint8)
    canvas[:content_h, :content_w] = content.astype(np.uint8)
    return canvas, ResizeTransform(
        scale=scale,
        pad_right=target - content_w,
        pad_bottom=target - content_h,
        target=target,
        src_height=h,
        src_width=w,
    )


def map_box(box: BoundingBox, transform: ResizeTransform, direction: str) -> BoundingBox:
    """Scale a box between original and model coordinates (round-trip drift <= 1 px)."""
    if direction == "forward":
        factor = transform.scale
        max_x = max_y = transform.target - 1
    elif direction == "inverse":
        factor = 1.0 / transform.scale
        max_x, max_y = transform.src_width - 1, transform.src_height - 1
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    coords = round_half_away(np.array(box.as_xyxy(), dtype=np.float64) * factor)
    x0, y0, x1, y1 = (
        int(np.clip(coords[0], 0, max_x)),
        int(np.clip(coords[1], 0, max_y)),
        int(np.clip(coords[2], 0, max_x)),
        int(np.clip(coords[3], 0, max_y)),
    )
    return BoundingBox(x0, y0, x1, y1)


def mask_to_model_space(mask: BinaryMask, transform: ResizeTransform) -> np.ndarray:
    """Nearest-neighbor map of a {0,1} mask into the padded model square."""
    content = resize_nearest(mask, transform.content_height, transform.content_width)
    canvas = np.zeros((transform.target, transform.target), dtype=np.uint8)
    canvas[: transform.content_height, : transform.content_width] = content
    return canvas


def mask_to_original_space(values: np.ndarray, transform: ResizeTransform) -> np.ndarray:
    """Crop the padded content region and resample back to original size.

    Accepts probability or binary grids at target x target; returns float64
    at src_height x src_width, clipped to [0, 1].
    """
    content = np.asarray(values, dtype=np.float64)[
        : transform.content_height, : transform.content_width
    ]
    out = resize_bilinear(content, transform.src_height, transform.src_width)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Box extraction and mask file I/O


def extract_box(mask_bytes: np.ndarray) -> BoundingBox:
    """Tight box over pixels whose byte value strictly exceeds 1."""
    arr = np.asarray(mask_bytes)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a nonempty 2-D grid, got shape {arr.shape}")
    rows, cols = np.nonzero(arr > 1)
    if rows.size == 0:
        raise ValueError("empty mask: no pixel value exceeds the threshold of 1")
    return BoundingBox(
        x_min=int(cols.min()), y_min=int(rows.min()),
        x_max=int(cols.max()), y_max=int(rows.max()),
    )


def box_from_binary_mask(mask: BinaryMask) -> BoundingBox:
    # promote {0,1} to {0,255} so the strict >1 rule behaves as for byte masks
    return extract_box(np.asarray(mask, dtype=np.uint8) * 255)


def write_mask(path: str | Path, mask: BinaryMask) -> None:
    """Write a {0,1} mask as an 8-bit single-channel file (foreground 255)."""
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255, mode="L").save(path)


def read_mask_bytes(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def read_mask(path: str | Path) -> BinaryMask:
    """Read a mask file back to {0,1} (byte values > 1 are foreground)."""
    return (read_mask_bytes(path) > 1).astype(np.uint8)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


# ---------------------------------------------------------------------------
# Polygon rasterization (even-odd rule, boundary centers included)


def rasterize_polygon(
    vertices: list[tuple[int, int]] | tuple[tuple[int, int], ...],
    height: int,
    width: int,
) -> BinaryMask:
    """Rasterize a polygon: pixel centers inside (even-odd) or exactly on an edge."""
    verts = [(int(x), int(y)) for x, y in vertices]
    if len(verts) < 3:
        raise ValueError(f"polygon needs >= 3 vertices, got {len(verts)}")
    for x, y in verts:
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"vertex ({x},{y}) outside {height}x{width} grid")
    edges = [(verts[i], verts[(i + 1) % len(verts)]) for i in range(len(verts))]
    mask = np.zeros((height, width), dtype=np.uint8)
    xs = np.arange(width)
    ys_involved = range(min(y for _, y in verts), max(y for _, y in verts) + 1)
    for y in ys_involved:
        crossings = np.zeros(width, dtype=np.int64)
        on_edge = np.zeros(width, dtype=bool)
        for (x1, y1), (x2, y2) in edges:
            dy, dx = y2 - y1, x2 - x1
            if dy == 0:
                if y == y1:
                    on_edge[min(x1, x2): max(x1, x2) + 1] = True
                continue
            if min(y1, y2) <= y <= max(y1, y2):
                num = x1 * dy + (y - y1) * dx
                if num % dy == 0:  # integer intersection: center exactly on edge
                    x_on = num // dy
                    if 0 <= x_on < width:
                        on_edge[x_on] = True
            if (y1 > y) != (y2 > y):  # half-open span avoids double vertex counts
                x_int = x1 + (y - y1) * dx / dy
                crossings += xs < x_int
        mask[y] = ((crossings % 2 == 1) | on_edge).astype(np.uint8)
    return mask


def polygon_box(vertices, height: int, width: int) -> BoundingBox:
    """Tight box of the rasterized polygon (rasterizes a local window only)."""
    vx = [int(x) for x, _ in vertices]
    vy = [int(y) for _, y in vertices]
    x0, x1 = max(min(vx), 0), min(max(vx), width - 1)
    y0, y1 = max(min(vy), 0), min(max(vy), height - 1)
    local = rasterize_polygon(
        [(x - x0, y - y0) for x, y in vertices], y1 - y0 + 1, x1 - x0 + 1
    )
    box = box_from_binary_mask(local)
    return BoundingBox(box.x_min + x0, box.y_min + y0, box.x_max + x0, box.y_max + y0)


# ---------------------------------------------------------------------------
# Manifests


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    image_path: Path
    width: int
    height: int
    split: str
    instances: tuple[AnnotatedInstance, ...]


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ManifestRecord, ...]
    source_kind: str  # polygon_manifest | mask_directory | crack500_layout

    def __len__(self) -> int:
        return len(self.records)

    def split_records(self, split: str) -> tuple[ManifestRecord, ...]:
        return tuple(r for r in self.records if r.split == split)

    def split_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {"train": 0, "test": 0}
        for r in self.records:
            counts[r.split] += 1
        return counts

    def class_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.records:
            for inst in r.instances:
                counts[inst.class_name] = counts.get(inst.class_name, 0) + 1
        return counts


def _parse_instance(
    entry: dict, base: Path, width: int, height: int, where: str
) -> AnnotatedInstance:
    cls_name = entry.get("class")
    if cls_name is None:
        cls = None
    else:
        try:
            cls = DistressClass(cls_name)
        except ValueError:
            raise ValueError(f"{where}: unknown class {cls_name!r}") from None
    if "polygon" in entry:
        poly = tuple((int(x), int(y)) for x, y in entry["polygon"])
        if len(poly) < 3:
            raise ValueError(f"{where}: polygon needs >= 3 vertices, got {len(poly)}")
        for x, y in poly:
            if not (0 <= x < width and 0 <= y < height):
                raise ValueError(
                    f"{where}: polygon vertex ({x},{y}) outside {height}x{width} image"
                )
        return AnnotatedInstance(cls, polygon_box(poly, height, width), polygon=poly)
    if "mask_path" in entry:
        mask_path = (base / entry["mask_path"]).resolve()
        if not mask_path.is_file():
            raise ValueError(f"{where}: missing mask file {mask_path}")
        raw = read_mask_bytes(mask_path)
        if raw.shape != (height, width):
            raise ValueError(
                f"{where}: mask shape {raw.shape} != image shape {(height, width)}"
            )
        component = entry.get("component")
        if component is not None:
            labels, _ = ndimage.label(raw > 1, structure=EIGHT_CONNECTED)
            sel = labels == int(component)
            if not sel.any():
                raise ValueError(f"{where}: mask has no component {component}")
            box = box_from_binary_mask(sel.astype(np.uint8))
        else:
            box = extract_box(raw)
        return AnnotatedInstance(cls, box, mask_path=str(mask_path), component=component)
    if "box" in entry:
        x0, y0, x1, y1 = (int(v) for v in entry["box"])
        if not (0 <= x0 <= x1 < width and 0 <= y0 <= y1 < height):
            raise ValueError(f"{where}: box {entry['box']} outside {height}x{width} image")
        return AnnotatedInstance(cls, BoundingBox(x0, y0, x1, y1))
    raise ValueError(f"{where}: instance needs one of polygon, mask_path, box")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a line-delimited manifest; errors carry the record index."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent
    records: list[ManifestRecord] = []
    seen_ids: set[str] = set()
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("no records in manifest")
    for i, line in enumerate(lines):
        where = f"record {i}"
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{where}: malformed JSON ({exc})") from None
        if "image_path" not in entry:
            raise ValueError(f"{where}: missing image_path")
        image_path = (base / entry["image_path"]).resolve()
        if not image_path.is_file():
            raise ValueError(f"{where}: missing image file {image_path}")
        with Image.open(image_path) as img:
            width, height = img.size
        split = entry.get("split", "train")
        if split not in ("train", "test"):
            raise ValueError(f"{where}: split must be train or test, got {split!r}")
        instances = tuple(
            _parse_instance(inst, base, width, height, f"{where} instance {j}")
            for j, inst in enumerate(entry.get("instances", []))
        )
        rec_id = entry.get("id") or image_path.stem
        if rec_id in seen_ids:
            raise ValueError(f"{where}: duplicate id {rec_id!r}")
        seen_ids.add(rec_id)
        records.append(
            ManifestRecord(rec_id, image_path, width, height, split, instances)
        )
    return DatasetManifest(tuple(records), source_kind="polygon_manifest")


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest as line-delimited JSON with paths relative to it."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: str | Path) -> str:
        try:
            return str(Path(p).resolve().relative_to(base))
        except ValueError:
            return str(Path(p).resolve())

    with open(path, "w") as fh:
        for rec in manifest.records:
            instances = []
            for inst in rec.instances:
                entry: dict = {"class": inst.distress_class.value if inst.distress_class else None}
                if inst.polygon is not None:
                    entry["polygon"] = [[x, y] for x, y in inst.polygon]
                elif inst.mask_path is not None:
                    entry["mask_path"] = rel(inst.mask_path)
                    if inst.component is not None:
                        entry["component"] = inst.component
                else:
                    entry["box"] = list(inst.box.as_xyxy())
                instances.append(entry)
            fh.write(json.dumps({
                "id": rec.id,
                "image_path": rel(rec.image_path),
                "split": rec.split,
                "instances": instances,
            }) + "\n")


def instance_mask(record: ManifestRecord, instance: AnnotatedInstance) -> BinaryMask:
    """Materialize one instance's {0,1} mask at the record's full size."""
    if instance.polygon is not None:
        return rasterize_polygon(instance.polygon, record.height, record.width)
    if instance.mask_path is not None:
        binary = read_mask(instance.mask_path)
        if instance.component is None:
            return binary
        labels, _ = ndimage.label(binary, structure=EIGHT_CONNECTED)
        return (labels == instance.component).astype(np.uint8)
    raise ValueError("instance has no geometry (box-only record)")


def split_dataset(
    manifest: DatasetManifest, train_fraction: float, seed: int
) -> DatasetManifest:
    """Deterministic image-level reshuffle into train/test splits."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0,1), got {train_fraction}")
    n = len(manifest.records)
    if n < 2:
        raise ValueError(f"need at least 2 images to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(n * train_fraction)
    train_idx = set(int(i) for i in order[:n_train])
    records = tuple(
        replace(rec, split="train" if i in train_idx else "test")
        for i, rec in enumerate(manifest.records)
    )
    return DatasetManifest(records, source_kind=manifest.source_kind)


# ---------------------------------------------------------------------------
# Crack500 layout

_CRACK500_SPLITS = (("traindata", "train"), ("valdata", "train"), ("testdata", "test"))
_IMAGE_EXTS = (".jpg", ".jpeg", ".png")


def _crack500_pairs(directory: Path) -> tuple[list[tuple[Path, Path]], list[str]]:
    images, masks = {}, {}
    for f in sorted(directory.iterdir()):
        if not f.is_file():
            continue
        if f.stem.endswith("_mask"):
            masks[f.stem[: -len("_mask")]] = f
        elif f.suffix.lower() in _IMAGE_EXTS:
            images[f.stem] = f
    orphans = [str(images[s]) for s in sorted(set(images) - set(masks))]
    orphans += [str(masks[s]) for s in sorted(set(masks) - set(images))]
    pairs = [(images[s], masks[s]) for s in sorted(set(images) & set(masks))]
    return pairs, orphans


def load_crack500(root: str | Path) -> DatasetManifest:
    """Ingest a Crack500-layout directory: per-image binary masks, boxes per component."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")
    split_dirs = [(root / d, split) for d, split in _CRACK500_SPLITS if (root / d).is_dir()]
    if not split_dirs:
        split_dirs = [(root, "train")]
    records: list[ManifestRecord] = []
    orphans: list[str] = []
    for directory, split in split_dirs:
        pairs, found_orphans = _crack500_pairs(directory)
        orphans.extend(found_orphans)
        for image_path, mask_path in pairs:
            with Image.open(image_path) as img:
                width, height = img.size
            raw = read_mask_bytes(mask_path)
            if raw.shape != (height, width):
                raise ValueError(
                    f"mask shape {raw.shape} != image size {(height, width)}: {mask_path}"
                )
            labels, count = ndimage.label(raw > 1, structure=EIGHT_CONNECTED)
            instances = []
            for comp in range(1, count + 1):
                sel = labels == comp
                if int(sel.sum()) < MIN_COMPONENT_PIXELS:
                    continue
                instances.append(
                    AnnotatedInstance(
                        None,
                        box_from_binary_mask(sel.astype(np.uint8)),
                        mask_path=str(mask_path),
                        component=comp,
                    )
                )
            rec_id = str(image_path.relative_to(root)) if directory != root else image_path.stem
            records.append(
                ManifestRecord(rec_id, image_path, width, height, split, tuple(instances))
            )
    if orphans:
        raise ValueError("unpaired image/mask files: " + ", ".join(orphans))
    if not records:
        raise ValueError(f"no image/mask pairs under {root}")
    return DatasetManifest(tuple(records), source_kind="crack500_layout")
