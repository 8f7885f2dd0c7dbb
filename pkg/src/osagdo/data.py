"""Dataset manifests, sparse-to-dense annotation, augmentation and fixtures.

Manifest layout (one JSON document)::

    {"schema_version": 1,
     "categories": [...], "affordances": [...],
     "flip_pairs": [[a, b], ...],
     "records": [{"id": ..., "image": "relative/path.png", "category": ...,
                  "annotations": {"affordance": [[x, y], ...]}}]}

Coordinates are pixel floats in the original image, origin top-left.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import cv2
import numpy as np

from .core import Image, resample

SCHEMA_VERSION = 1
RESIZE = 256
CROP = 224
DEFAULT_SIGMA = 10.0


def load_schema() -> dict:
    """The closed AGDDO15 vocabularies and flip-pair table shipped with the package."""
    text = resources.files("osagdo").joinpath("resources/agddo15.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    image_path: Path
    category: str
    annotations: dict[str, list[tuple[float, float]]]
    coverage: float | None = None


@dataclass
class Manifest:
    categories: list[str]
    affordances: list[str]
    flip_pairs: list[tuple[str, str]]
    records: list[DatasetRecord]
    report: dict = field(default_factory=dict)


class ManifestError(ValueError):
    def __init__(self, violations: list[tuple[str | None, str]]):
        self.violations = violations
        lines = [f"[{rid or '-'}] {msg}" for rid, msg in violations]
        super().__init__(f"{len(violations)} manifest violation(s):\n" + "\n".join(lines))


@dataclass(frozen=True)
class SplitSpec:
    train: list[DatasetRecord]
    test: list[DatasetRecord]


def read_image(path) -> Image:
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise FileNotFoundError(f"cannot read image {path}")
    return Image(np.ascontiguousarray(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)))


def write_image(path, img: Image) -> None:
    if not cv2.imwrite(str(path), cv2.cvtColor(img.pixels, cv2.COLOR_RGB2BGR)):
        raise OSError(f"cannot write {path}")


def write_heatmap16(path, values: np.ndarray) -> None:
    q = np.round(np.clip(values, 0.0, 1.0) * 65535).astype(np.uint16)
    if not cv2.imwrite(str(path), q):
        raise OSError(f"cannot write {path}")


def read_heatmap16(path) -> np.ndarray:
    q = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if q is None:
        raise FileNotFoundError(f"cannot read heatmap {path}")
    return q.astype(np.float64) / 65535.0


def _image_size(path: Path) -> tuple[int, int] | None:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    return None if img is None else img.shape[:2]


def load_manifest(path) -> Manifest:
    """Parse and validate a manifest; raises :class:`ManifestError` listing every violation."""
    path = Path(path)
    doc = json.loads(path.read_text())
    schema = load_schema()
    bad: list[tuple[str | None, str]] = []

    for key in ("schema_version", "categories", "affordances", "flip_pairs", "records"):
        if key not in doc:
            bad.append((None, f"missing top-level key {key!r}"))
    if bad:
        raise ManifestError(bad)
    if doc["schema_version"] != SCHEMA_VERSION:
        bad.append((None, f"unsupported schema_version {doc['schema_version']!r}"))
    cats, affs = list(doc["categories"]), list(doc["affordances"])
    for c in cats:
        if c not in schema["categories"]:
            bad.append((None, f"category {c!r} not in schema vocabulary"))
    for a in affs:
        if a not in schema["affordances"]:
            bad.append((None, f"affordance {a!r} not in schema vocabulary"))
    pairs = []
    for pair in doc["flip_pairs"]:
        if len(pair) != 2 or any(a not in affs for a in pair):
            bad.append((None, f"flip pair {pair!r} references undeclared affordances"))
        else:
            pairs.append((pair[0], pair[1]))

    records: list[DatasetRecord] = []
    seen: set[str] = set()
    for i, rec in enumerate(doc["records"]):
        rid = rec.get("id")
        label = rid if rid is not None else f"#{i}"
        missing = [k for k in ("id", "image", "category", "annotations") if k not in rec]
        if missing:
            bad.append((label, f"missing field(s) {missing}"))
            continue
        if rid in seen:
            bad.append((label, "duplicate record id"))
        seen.add(rid)
        if rec["category"] not in cats:
            bad.append((label, f"unknown category {rec['category']!r}"))
        img_path = (path.parent / rec["image"]).resolve()
        size = _image_size(img_path) if img_path.exists() else None
        if size is None:
            bad.append((label, f"image not found or unreadable: {rec['image']}"))
        anns: dict[str, list[tuple[float, float]]] = {}
        for aff, pts in rec["annotations"].items():
            if aff not in affs:
                bad.append((label, f"unknown affordance {aff!r}"))
                continue
            clean = []
            for pt in pts:
                if len(pt) != 2 or not all(isinstance(v, (int, float)) for v in pt):
                    bad.append((label, f"malformed point {pt!r} for {aff}"))
                    continue
                x, y = float(pt[0]), float(pt[1])
                if size is not None and not (0 <= x < size[1] and 0 <= y < size[0]):
                    bad.append((label, f"point ({x}, {y}) for {aff} outside {size[1]}x{size[0]} image"))
                clean.append((x, y))
            anns[aff] = clean
        records.append(DatasetRecord(rid, img_path, rec["category"], anns, rec.get("coverage")))

    if bad:
        raise ManifestError(bad)
    per_cat = Counter(r.category for r in records)
    per_aff = Counter(a for r in records for a in r.annotations)
    pairs_ca = Counter((r.category, a) for r in records for a in r.annotations)
    report = {
        "n_records": len(records),
        "per_category": {c: per_cat.get(c, 0) for c in cats},
        "per_affordance": {a: per_aff.get(a, 0) for a in affs},
        "category_affordance": {f"{c}/{a}": n for (c, a), n in sorted(pairs_ca.items())},
        "violations": 0,
    }
    return Manifest(cats, affs, pairs, records, report)


def one_shot_split(records: list[DatasetRecord]) -> SplitSpec:
    """First record (manifest order) of each category trains; the rest test."""
    train, test, seen = [], [], set()
    for r in records:
        if r.category in seen:
            test.append(r)
        else:
            seen.add(r.category)
            train.append(r)
    return SplitSpec(train, test)


def densify(points, H: int, W: int, sigma: float = DEFAULT_SIGMA,
            normalize: bool = True) -> np.ndarray:
    """Sum of unit-peak Gaussians at ``points``, rescaled so the peak is 1."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    pts = np.asarray(list(points), dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros((H, W))
    xs, ys = pts[:, 0], pts[:, 1]
    if np.any((xs < 0) | (xs >= W) | (ys < 0) | (ys >= H)):
        raise ValueError(f"annotation point outside {W}x{H} image")
    gx = np.exp(-(np.arange(W)[None, :] - xs[:, None]) ** 2 / (2 * sigma * sigma))
    gy = np.exp(-(np.arange(H)[None, :] - ys[:, None]) ** 2 / (2 * sigma * sigma))
    m = gy.T @ gx
    return m / m.max() if normalize else m


def dense_heatmaps(record: DatasetRecord, H: int, W: int,
                   sigma: float = DEFAULT_SIGMA) -> dict[str, np.ndarray]:
    return {a: densify(pts, H, W, sigma) for a, pts in record.annotations.items() if pts}


def heatmap_cache_path(record: DatasetRecord, affordance: str, sigma: float) -> Path:
    p = record.image_path
    return p.with_name(f"{p.stem}.{affordance}.s{sigma:g}.png")


def write_dense_cache(record: DatasetRecord, sigma: float = DEFAULT_SIGMA) -> list[Path]:
    img = read_image(record.image_path)
    out = []
    for aff, hm in dense_heatmaps(record, img.height, img.width, sigma).items():
        path = heatmap_cache_path(record, aff, sigma)
        write_heatmap16(path, hm)
        out.append(path)
    return out


@dataclass(frozen=True)
class Augmentation:
    oy: int
    ox: int
    flip: bool


def resize_for(crop: int) -> int:
    """Pre-crop size keeping the 256:224 ratio for other encoder resolutions."""
    return RESIZE if crop == CROP else int(round(crop * RESIZE / CROP))


def draw_augmentation(rng: np.random.Generator, max_offset: int = RESIZE - CROP) -> Augmentation:
    oy, ox = (int(v) for v in rng.integers(0, max_offset + 1, size=2))
    return Augmentation(oy, ox, bool(rng.random() < 0.5))


def _resize_image(img: Image, size: int) -> Image:
    if (img.height, img.width) == (size, size):
        return img
    px = resample(img.pixels.astype(np.float64), size, size)
    return Image(np.clip(np.round(px), 0, 255).astype(np.uint8))


def resize_pair(img: Image, heatmaps: dict[str, np.ndarray], size: int = RESIZE):
    """Resize image and heatmaps with the same corner-aligned bilinear grid."""
    return _resize_image(img, size), {k: resample(v, size, size) for k, v in heatmaps.items()}


def apply_augmentation(img: Image, heatmaps: dict[str, np.ndarray], aug: Augmentation,
                       flip_pairs=(), size: int = CROP):
    """Crop (and optionally mirror) an already-resized image with its heatmaps.

    Mirroring swaps the channels of each left/right affordance pair so side
    conventions survive the flip.
    """
    sl = (slice(aug.oy, aug.oy + size), slice(aug.ox, aug.ox + size))
    px = img.pixels[sl]
    maps = {k: v[sl] for k, v in heatmaps.items()}
    if aug.flip:
        px = px[:, ::-1]
        maps = {k: v[:, ::-1] for k, v in maps.items()}
        swap = {}
        for a, b in flip_pairs:
            swap[a], swap[b] = b, a
        maps = {swap.get(k, k): v for k, v in maps.items()}
    return Image(np.ascontiguousarray(px)), {k: np.ascontiguousarray(v) for k, v in maps.items()}


def preprocess_train(img: Image, heatmaps: dict[str, np.ndarray], rng: np.random.Generator,
                     flip_pairs=(), crop: int = CROP):
    size = resize_for(crop)
    img, heatmaps = resize_pair(img, heatmaps, size)
    return apply_augmentation(img, heatmaps, draw_augmentation(rng, size - crop), flip_pairs, crop)


def preprocess_eval(img: Image, heatmaps: dict[str, np.ndarray], crop: int = CROP):
    size = resize_for(crop)
    img, heatmaps = resize_pair(img, heatmaps, size)
    off = (size - crop) // 2
    return apply_augmentation(img, heatmaps, Augmentation(off, off, False), size=crop)


# -- synthetic fixture -------------------------------------------------------

FIXTURE_SIZE = (240, 320)  # H, W

# unit-box silhouettes (x right, y down) and which vertices carry which affordance;
# "pick" sits on the image-right side, "place" on the image-left side
_TEMPLATES = {
    "towel": {
        "polygon": [(0, 0), (1, 0), (1, 1), (0, 1)],
        "box": (0.55, 0.6),
        "landmarks": {"pick_corner": [1, 2], "place_corner": [0, 3], "put_center": "centroid"},
    },
    "short_sleeve_tshirt": {
        "polygon": [(0.4, 0.0), (0.6, 0.0), (0.78, 0.05), (1.0, 0.3), (0.88, 0.42), (0.78, 0.32),
                    (0.78, 1.0), (0.22, 1.0), (0.22, 0.32), (0.12, 0.42), (0.0, 0.3), (0.22, 0.05)],
        "box": (0.65, 0.7),
        "landmarks": {"grasp_sleeve": [3, 10], "grasp_shoulder": [2, 11], "put_hem": [6, 7]},
    },
    "shorts": {
        "polygon": [(0, 0), (1, 0), (1, 1), (0.56, 1), (0.5, 0.45), (0.44, 1), (0, 1)],
        "box": (0.5, 0.65),
        "landmarks": {"grasp_waist": [0, 1], "pick_leg": [2], "place_leg": [6]},
    },
}


def _fixture_image(category: str, rng: np.random.Generator):
    H, W = FIXTURE_SIZE
    tpl = _TEMPLATES[category]
    blocks = rng.integers(72, 96, size=(H // 20, W // 20, 1)) + rng.integers(-15, 16, size=(1, 1, 3))
    bg = np.repeat(np.repeat(blocks, 20, axis=0), 20, axis=1)
    px = np.clip(bg, 0, 255).astype(np.uint8)

    bw, bh = tpl["box"]
    scale = rng.uniform(0.9, 1.1)
    ow, oh = bw * W * scale, bh * H * scale
    angle = np.deg2rad(rng.uniform(-8, 8))
    cx = W / 2 + rng.uniform(-10, 10)
    cy = H / 2 + rng.uniform(-8, 8)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    unit = np.asarray(tpl["polygon"], dtype=np.float64) - 0.5
    verts = (unit * [ow, oh]) @ rot.T + [cx, cy]
    verts = np.clip(np.round(verts), [2, 2], [W - 3, H - 3]).astype(np.int32)
    color = tuple(int(c) for c in rng.integers(150, 256, size=3))
    cv2.fillPoly(px, [verts.reshape(-1, 1, 2)], color)

    anns = {}
    for aff, idx in tpl["landmarks"].items():
        if idx == "centroid":
            c = np.round(verts.mean(axis=0))
            anns[aff] = [[float(c[0]), float(c[1])]]
        else:
            anns[aff] = [[float(verts[i, 0]), float(verts[i, 1])] for i in idx]
    return Image(px), anns, verts


def make_fixture(seed: int, out_dir) -> Path:
    """Write a 3 categories x 3 images synthetic dataset; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    schema = load_schema()
    records = []
    for ci, cat in enumerate(_TEMPLATES):
        for k in range(3):
            rng = np.random.default_rng([seed, ci, k])
            img, anns, _ = _fixture_image(cat, rng)
            rel = f"images/{cat}_{k}.png"
            write_image(out / rel, img)
            records.append({"id": f"{cat}_{k}", "image": rel, "category": cat, "annotations": anns})
    doc = {
        "schema_version": SCHEMA_VERSION,
        "categories": schema["categories"],
        "affordances": schema["affordances"],
        "flip_pairs": schema["flip_pairs"],
        "records": records,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path
