"""Labeled image collections.

A dataset is an ordered, immutable list of (path, label) items. The label
is either REAL or a generator identifier. Items carry a provenance tag so
defense experiments can assert which attacks produced which images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ..errors import ContractError, DataIOError
from .images import Image, load_image

REAL_LABEL = "REAL"

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class DatasetItem:
    path: Path
    label: str
    source: str = "clean"  # provenance: "clean" or an attack identifier


@dataclass(frozen=True)
class Dataset:
    items: tuple[DatasetItem, ...]
    label_set: tuple[str, ...] = field(default=())

    def __post_init__(self):
        labels = self.label_set or tuple(sorted({it.label for it in self.items}))
        object.__setattr__(self, "label_set", labels)
        declared = set(self.label_set)
        for it in self.items:
            if it.label not in declared:
                raise ContractError(f"label {it.label!r} not in declared set {labels}")
            if not it.path.is_file():
                raise DataIOError(f"dataset path does not exist: {it.path}")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[DatasetItem]:
        return iter(self.items)

    def load(self, i: int) -> Image:
        return load_image(self.items[i].path)

    def load_all(self) -> np.ndarray:
        """Stack every image; requires uniform shapes."""
        imgs = [self.load(i) for i in range(len(self))]
        shapes = {im.shape for im in imgs}
        if len(shapes) > 1:
            raise ContractError(f"mixed image shapes in dataset: {sorted(shapes)}")
        return np.stack(imgs)

    def labels(self) -> list[str]:
        return [it.label for it in self.items]

    def by_label(self, label: str) -> "Dataset":
        return Dataset(
            tuple(it for it in self.items if it.label == label), self.label_set
        )

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.items[int(i)] for i in indices), self.label_set)

    def counts(self) -> dict[str, int]:
        out = {lb: 0 for lb in self.label_set}
        for it in self.items:
            out[it.label] += 1
        return out

    def merge(self, other: "Dataset") -> "Dataset":
        labels = tuple(sorted(set(self.label_set) | set(other.label_set)))
        return Dataset(self.items + other.items, labels)

    @staticmethod
    def from_folder(root, label: str, source: str = "clean") -> "Dataset":
        root = Path(root)
        if not root.is_dir():
            raise DataIOError(f"not a directory: {root}")
        paths = sorted(
            p for p in root.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
        )
        if not paths:
            raise DataIOError(f"no images under {root}")
        return Dataset(tuple(DatasetItem(p, label, source) for p in paths), (label,))

    @staticmethod
    def from_labeled_folders(root) -> "Dataset":
        """One subdirectory per label (the layout gen-corpus emits)."""
        root = Path(root)
        subdirs = sorted(d for d in root.iterdir() if d.is_dir())
        if not subdirs:
            raise DataIOError(f"no label subdirectories under {root}")
        items: list[DatasetItem] = []
        for d in subdirs:
            items.extend(
                DatasetItem(p, d.name)
                for p in sorted(d.iterdir())
                if p.suffix.lower() in _IMAGE_SUFFIXES
            )
        labels = tuple(sorted(d.name for d in subdirs))
        return Dataset(tuple(items), labels)
