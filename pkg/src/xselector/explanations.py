"""Per-day explanation candidates, their featurization, and combination enumeration.

Each trading day offers a small set of candidate explanations (saliency images
and free-text sentences, each tagged with a price class). A presentation choice
is a bitmask over the day's candidates; with the canonical 9 candidates there
are 2^9 = 512 possible combinations.

Featurizers here are deterministic and dependency-light so the artifact stays
reproducible: text uses signed feature hashing over word tokens, images use a
fixed 16x16 luminance grid. Manifests may instead carry precomputed feature
vectors, in which case those are used verbatim.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
from PIL import Image, UnidentifiedImageError

from .market import CLASS_INDEX, PriceClass

FEATURE_DIM = 256
SALIENCY_GRID = 16
COMBINATION_CAP = 16


class ManifestError(ValueError):
    """Invalid manifest content."""


class Modality(Enum):
    SALIENCY = "saliency"
    TEXT = "text"


MODALITY_ORDER = {Modality.SALIENCY: 0, Modality.TEXT: 1}


@dataclass(frozen=True, eq=False)
class ExplanationItem:
    id: str
    day: int
    price_class: PriceClass
    modality: Modality
    payload: str  # sentence text for TEXT, image path for SALIENCY
    feature: np.ndarray

    def __post_init__(self) -> None:
        feat = np.asarray(self.feature, dtype=float)
        if feat.ndim != 1:
            raise ManifestError(f"item {self.id}: feature must be a vector")
        if not np.all(np.isfinite(feat)):
            raise ManifestError(f"item {self.id}: non-finite feature values")
        object.__setattr__(self, "feature", feat)


def canonical_item_order(items: list[ExplanationItem]) -> list[ExplanationItem]:
    """Stable sort into canonical order: saliency before text, BULL/NEUTRAL/BEAR within."""
    return sorted(
        items,
        key=lambda it: (MODALITY_ORDER[it.modality], CLASS_INDEX[it.price_class]),
    )


@dataclass(frozen=True)
class DayCandidates:
    """One day's explanation candidates in canonical order."""

    day: int
    items: tuple[ExplanationItem, ...]

    def __post_init__(self) -> None:
        dims = {it.feature.shape[0] for it in self.items}
        if len(dims) > 1:
            raise ManifestError(f"day {self.day}: mixed feature dimensions {sorted(dims)}")
        for it in self.items:
            if it.day != self.day:
                raise ManifestError(f"item {it.id}: day {it.day} grouped under {self.day}")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True, order=True)
class Combination:
    """Bitmask over a day's candidates; bit k is the presentation flag of item k."""

    mask: int
    size: int

    def __post_init__(self) -> None:
        if self.size < 0:
            raise ValueError("negative combination size")
        if not 0 <= self.mask < (1 << self.size):
            raise ValueError(f"mask {self.mask} out of range for {self.size} items")

    @classmethod
    def empty(cls, size: int) -> "Combination":
        return cls(mask=0, size=size)

    @classmethod
    def full(cls, size: int) -> "Combination":
        return cls(mask=(1 << size) - 1, size=size)

    @classmethod
    def from_indices(cls, indices, size: int) -> "Combination":
        mask = 0
        for i in indices:
            if not 0 <= i < size:
                raise ValueError(f"index {i} out of range for {size} items")
            mask |= 1 << i
        return cls(mask=mask, size=size)

    def flag(self, index: int) -> bool:
        return bool((self.mask >> index) & 1)

    def indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.size) if self.flag(i))

    def count(self) -> int:
        return bin(self.mask).count("1")

    def to_json(self) -> dict:
        return {"mask": self.mask, "size": self.size}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Combination":
        return cls(mask=int(obj["mask"]), size=int(obj["size"]))


def enumerate_combinations(
    candidates: DayCandidates, cap: int = COMBINATION_CAP
) -> Iterator[Combination]:
    """Yield all 2^n combinations of a day's candidates in ascending mask order."""
    n = len(candidates)
    if n > cap:
        raise ValueError(
            f"{n} candidates exceed the exhaustive-enumeration cap of {cap}; "
            "a beam or sampling mode would be required"
        )
    for mask in range(1 << n):
        yield Combination(mask=mask, size=n)


_TOKEN_RE = re.compile(r"[a-z0-9']+")


def _fallback_vector(dim: int) -> np.ndarray:
    vec = np.zeros(dim)
    vec[0] = 1.0
    return vec


def featurize_text(sentence: str, dim: int = FEATURE_DIM) -> np.ndarray:
    """Signed hashed bag-of-tokens embedding with unit L2 norm.

    Deterministic across runs and platforms (BLAKE2-based hashing, no Python
    hash randomization).
    """
    if not isinstance(sentence, str) or not sentence.strip():
        raise ValueError("cannot featurize an empty sentence")
    tokens = _TOKEN_RE.findall(sentence.lower())
    if not tokens:
        raise ValueError(f"no word tokens in {sentence!r}")
    vec = np.zeros(dim)
    for tok in tokens:
        digest = hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "big")
        sign = 1.0 if value & 1 else -1.0
        vec[(value >> 1) % dim] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:  # total sign cancellation; vanishingly rare
        return _fallback_vector(dim)
    return vec / norm


def _to_luminance(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=float)
    if arr.ndim == 3:
        if arr.shape[2] >= 3:
            arr = arr[:, :, 0] * 0.299 + arr[:, :, 1] * 0.587 + arr[:, :, 2] * 0.114
        else:
            arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D or 3-D image, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty image")
    if arr.max() > 1.0:
        arr = arr / 255.0
    return arr


def _grid_means(arr: np.ndarray, grid: int) -> np.ndarray:
    # Exact block upsample first so every grid cell is non-empty; block means
    # are unchanged by integer upsampling, keeping the featurizer stable
    # across image resolutions.
    h, w = arr.shape
    if h < grid:
        arr = np.repeat(arr, -(-grid // h), axis=0)
    if w < grid:
        arr = np.repeat(arr, -(-grid // w), axis=1)
    h, w = arr.shape
    rows = np.linspace(0, h, grid + 1).astype(int)
    cols = np.linspace(0, w, grid + 1).astype(int)
    out = np.empty((grid, grid))
    for i in range(grid):
        for j in range(grid):
            out[i, j] = arr[rows[i] : rows[i + 1], cols[j] : cols[j + 1]].mean()
    return out


def featurize_saliency(
    image: np.ndarray | str | Path, dim: int = FEATURE_DIM, grid: int = SALIENCY_GRID
) -> np.ndarray:
    """Fixed-grid luminance embedding of a saliency image, unit L2 norm.

    Accepts an array (HxW or HxWxC, 0..1 or 0..255) or a path to a decodable
    image file. An all-black image maps to a defined fallback vector with the
    first component set to 1.
    """
    if isinstance(image, (str, Path)):
        try:
            with Image.open(image) as img:
                arr = np.asarray(img.convert("RGB"), dtype=float)
        except (UnidentifiedImageError, OSError) as exc:
            raise ValueError(f"cannot decode image {image}: {exc}") from None
    else:
        arr = image
    cells = _grid_means(_to_luminance(arr), grid).ravel()
    vec = np.zeros(dim)
    take = min(dim, cells.shape[0])
    vec[:take] = cells[:take]
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return _fallback_vector(dim)
    return vec / norm


def _parse_item(
    entry: Mapping, base_dir: Path, feature_dim: int
) -> ExplanationItem:
    item_id = str(entry["id"])
    try:
        price_class = PriceClass(entry["class"])
    except ValueError:
        raise ManifestError(f"item {item_id}: unknown class {entry['class']!r}") from None
    try:
        modality = Modality(entry["modality"])
    except ValueError:
        raise ManifestError(f"item {item_id}: unknown modality {entry['modality']!r}") from None

    if modality is Modality.TEXT:
        payload = entry.get("text")
        if not payload:
            raise ManifestError(f"item {item_id}: text item without a sentence")
    else:
        payload = entry.get("payload_path", "")

    if "feature" in entry and entry["feature"] is not None:
        feature = np.asarray(entry["feature"], dtype=float)
    elif modality is Modality.TEXT:
        feature = featurize_text(payload, dim=feature_dim)
    else:
        if not payload:
            raise ManifestError(f"item {item_id}: saliency item without payload_path or feature")
        image_path = base_dir / payload
        if not image_path.exists():
            raise ManifestError(f"item {item_id}: payload {image_path} not found")
        feature = featurize_saliency(image_path, dim=feature_dim)

    return ExplanationItem(
        id=item_id,
        day=int(entry["day"]),
        price_class=price_class,
        modality=modality,
        payload=str(payload),
        feature=feature,
    )


def load_manifest(
    path: str | Path, feature_dim: int = FEATURE_DIM
) -> dict[int, DayCandidates]:
    """Load a JSON manifest of explanation candidates, keyed by day index.

    Items missing a `feature` entry are featurized with the built-in
    featurizers (text from the sentence, saliency from the referenced image,
    resolved relative to the manifest file).
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise ManifestError(f"{path}: manifest must be a JSON array")
    seen_ids: set[str] = set()
    by_day: dict[int, list[ExplanationItem]] = {}
    for entry in entries:
        item = _parse_item(entry, path.parent, feature_dim)
        if item.id in seen_ids:
            raise ManifestError(f"duplicate item id {item.id!r}")
        seen_ids.add(item.id)
        by_day.setdefault(item.day, []).append(item)
    return {
        day: DayCandidates(day=day, items=tuple(canonical_item_order(items)))
        for day, items in sorted(by_day.items())
    }


def save_manifest(path: str | Path, days: Mapping[int, DayCandidates]) -> None:
    """Serialize candidates back to manifest JSON, feature vectors included."""
    entries = []
    for day in sorted(days):
        for item in days[day].items:
            entry: dict = {
                "id": item.id,
                "day": item.day,
                "class": item.price_class.value,
                "modality": item.modality.value,
                "feature": item.feature.tolist(),
            }
            if item.modality is Modality.TEXT:
                entry["text"] = item.payload
            else:
                entry["payload_path"] = item.payload
            entries.append(entry)
    Path(path).write_text(json.dumps(entries, indent=1), encoding="utf-8")


def find_item(days: Mapping[int, DayCandidates], item_id: str) -> ExplanationItem:
    for candidates in days.values():
        for item in candidates.items:
            if item.id == item_id:
                return item
    raise KeyError(item_id)
