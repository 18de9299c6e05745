"""Labeled image datasets: ingestion, rotation augmentation, stratified
splitting, and deterministic shuffled batching.

Datasets are held in memory as ``LabeledImage`` records. Class names map to
label indices in ascending lexicographic order of the class directory names.
All shuffling is driven by ``numpy`` generators seeded from (seed, stream)
tuples, so a fixed seed fixes every downstream ordering byte for byte.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError
from .image_io import load_image, resize_bilinear, rotate

SPLITS = ("train", "validation", "test")
IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".bmp")
ROTATION_DEGREES = (90, 180, 270)

# Disjoint rng stream tags so split and batch shuffles never share a sequence.
_SPLIT_STREAM = 1
_BATCH_STREAM = 2


@dataclass
class LabeledImage:
    """One image: ``[3, H, W]`` float32 pixels in [0, 1] plus its class label."""
    pixels: np.ndarray
    label: int
    source_path: str
    split: str = "unassigned"


@dataclass
class Dataset:
    images: list[LabeledImage]
    class_names: list[str]
    split_ratios: tuple[float, float, float] = (0.70, 0.20, 0.10)

    def subset(self, split: str) -> list[LabeledImage]:
        return [img for img in self.images if img.split == split]

    def class_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(self.class_names, 0)
        for img in self.images:
            counts[self.class_names[img.label]] += 1
        return counts


@dataclass
class Batch:
    inputs: np.ndarray  # [B, 3, H, W]
    labels: np.ndarray  # [B] int64
    paths: list[str] = field(default_factory=list)


def list_class_directories(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise InsufficientDataError(f"data root {root} is not a directory")
    return sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name)


def list_images(class_dir: Path) -> list[Path]:
    return sorted(p for p in class_dir.iterdir()
                  if p.suffix.lower() in IMAGE_EXTENSIONS and p.is_file())


def load_dataset(root, *, target_hw: tuple[int, int] = (100, 100),
                 workers: int = 1) -> Dataset:
    """Build a dataset from ``<root>/<CLASS_NAME>/*.{jpg,jpeg,bmp}``.

    Class label indices follow ascending lexicographic directory order.
    Decoding and resizing fan out over ``workers`` threads; the resulting
    image order depends only on the sorted file listing.
    """
    class_dirs = list_class_directories(root)
    class_names = [d.name for d in class_dirs]
    jobs: list[tuple[Path, int]] = []
    for label, class_dir in enumerate(class_dirs):
        jobs.extend((path, label) for path in list_images(class_dir))

    th, tw = target_hw

    def decode(job: tuple[Path, int]) -> LabeledImage:
        path, label = job
        pixels = resize_bilinear(load_image(path), th, tw)
        return LabeledImage(pixels=pixels, label=label, source_path=str(path))

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            images = list(pool.map(decode, jobs))
    else:
        images = [decode(job) for job in jobs]
    return Dataset(images=images, class_names=class_names)


def augment_rotations(dataset: Dataset, only_split: str | None = None) -> Dataset:
    """Add the 90/180/270-degree rotation of every image; size becomes 4x.

    Rotated copies keep their source's label and split assignment; their
    source paths carry an ``#r<degrees>`` suffix for traceability. With
    ``only_split`` set, images outside that split are kept but not rotated
    (use after splitting so augmented copies never straddle train/test).
    """
    images: list[LabeledImage] = []
    for img in dataset.images:
        images.append(img)
        if only_split is not None and img.split != only_split:
            continue
        for degrees in ROTATION_DEGREES:
            images.append(LabeledImage(
                pixels=rotate(img.pixels, degrees),
                label=img.label,
                source_path=f"{img.source_path}#r{degrees}",
                split=img.split,
            ))
    return Dataset(images=images, class_names=list(dataset.class_names),
                   split_ratios=dataset.split_ratios)


def split_dataset(dataset: Dataset, ratios: tuple[float, float, float] = (0.70, 0.20, 0.10),
                  seed: int = 42) -> Dataset:
    """Assign every image to train/validation/test, stratified per class.

    Per class of size n the validation and test splits get floor(ratio*n)
    images each and the remainder goes to train. Assignment shuffles each
    class's images with a generator seeded by ``seed``, so a fixed seed fixes
    the assignment exactly.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ValueError(f"split ratios must be non-negative, got {ratios}")
    by_class: dict[int, list[int]] = {i: [] for i in range(len(dataset.class_names))}
    for idx, img in enumerate(dataset.images):
        by_class[img.label].append(idx)
    for label, members in by_class.items():
        if 0 < len(members) < 3:
            raise InsufficientDataError(
                f"class {dataset.class_names[label]!r} has only {len(members)} images; "
                f"need at least 3 to split")
    rng = np.random.default_rng([_SPLIT_STREAM, seed])
    for label in range(len(dataset.class_names)):
        members = np.array(by_class[label], dtype=np.intp)
        if members.size == 0:
            continue
        perm = members[rng.permutation(members.size)]
        n = members.size
        # epsilon guards against 0.3*10 == 2.9999... flooring to 2
        n_val = int(np.floor(ratios[1] * n + 1e-9))
        n_test = int(np.floor(ratios[2] * n + 1e-9))
        n_train = n - n_val - n_test
        for i in perm[:n_train]:
            dataset.images[i].split = "train"
        for i in perm[n_train:n_train + n_val]:
            dataset.images[i].split = "validation"
        for i in perm[n_train + n_val:]:
            dataset.images[i].split = "test"
    dataset.split_ratios = tuple(ratios)
    return dataset


def batches(dataset: Dataset, split: str, batch_size: int, seed: int = 42,
            epoch: int = 0) -> list[Batch]:
    """Shuffled batches over one split; order is a pure function of (seed, epoch).

    Every member of the split appears exactly once; the final batch may be
    short. An empty split yields an empty list.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    members = dataset.subset(split)
    if not members:
        return []
    rng = np.random.default_rng([_BATCH_STREAM, seed, epoch])
    order = rng.permutation(len(members))
    out: list[Batch] = []
    for start in range(0, len(members), batch_size):
        chunk = [members[i] for i in order[start:start + batch_size]]
        out.append(Batch(
            inputs=np.stack([img.pixels for img in chunk]),
            labels=np.array([img.label for img in chunk], dtype=np.int64),
            paths=[img.source_path for img in chunk],
        ))
    return out


def write_manifest(dataset: Dataset, path) -> None:
    """Write `path,class,split` CSV rows recording the split assignment."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "class", "split"])
        for img in dataset.images:
            writer.writerow([img.source_path, dataset.class_names[img.label], img.split])


def read_manifest(path) -> list[tuple[str, str, str]]:
    """Read rows written by :func:`write_manifest`."""
    rows: list[tuple[str, str, str]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "class", "split"]:
            raise ValueError(f"unrecognized manifest header {header!r} in {path}")
        for row in reader:
            if len(row) != 3:
                raise ValueError(f"malformed manifest row {row!r} in {path}")
            rows.append((row[0], row[1], row[2]))
    return rows


def dataset_from_manifest(path, *, split: str | None = None,
                          class_names: list[str] | None = None,
                          target_hw: tuple[int, int] = (100, 100),
                          workers: int = 1) -> Dataset:
    """Decode the images recorded in a manifest, optionally one split only.

    ``class_names`` pins the label encoding (e.g. the one stored in a
    checkpoint); by default it is the sorted set of classes in the manifest.
    """
    rows = read_manifest(path)
    if split is not None:
        rows = [r for r in rows if r[2] == split]
    if class_names is None:
        class_names = sorted({cls for _, cls, _ in rows})
    index = {name: i for i, name in enumerate(class_names)}
    unknown = sorted({cls for _, cls, _ in rows if cls not in index})
    if unknown:
        raise ValueError(f"manifest classes {unknown} not in class vocabulary {class_names}")
    th, tw = target_hw

    def decode(row: tuple[str, str, str]) -> LabeledImage:
        p, cls, sp = row
        pixels = resize_bilinear(load_image(p), th, tw)
        return LabeledImage(pixels=pixels, label=index[cls], source_path=p, split=sp)

    if workers > 1 and len(rows) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            images = list(pool.map(decode, rows))
    else:
        images = [decode(row) for row in rows]
    return Dataset(images=images, class_names=list(class_names))
