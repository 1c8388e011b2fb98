"""Reference descriptors, cosine-similarity semantic fields, and the policy
observation.

A reference descriptor is the mean of hand-picked 2D features for one object
part. The semantic field compares every fused 3D descriptor against every
reference by cosine similarity, giving the policy M per-point channels that
say "how much does this point look like part j". Points no camera observed
carry the sentinel value -1 (the bottom of the similarity range) so "no
information" stays distinguishable from "orthogonal" (which is 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .fusion import DescriptorField
from .geometry import FeatureImage, bilinear_sample

__all__ = [
    "ReferenceDescriptorSet",
    "SemanticField",
    "PolicyObservation",
    "select_reference_descriptors",
    "compute_semantic_field",
    "assemble_observation",
    "save_reference_selection",
    "load_reference_selection",
    "references_from_selection",
    "UNSUPPORTED_SENTINEL",
]

UNSUPPORTED_SENTINEL = -1.0

# Pixel lists per part: {part name: [(u, v), ...]} for one reference image.
PixelLists = Mapping[str, Sequence[tuple[float, float]]]


@dataclass(frozen=True)
class ReferenceDescriptorSet:
    """M named part descriptors sharing the field feature dimension."""

    descriptors: np.ndarray  # (M, F) float64
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        d = np.asarray(self.descriptors, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] < 1:
            raise ValueError("need at least one reference descriptor")
        if d.shape[0] != len(self.labels):
            raise ValueError("labels must match descriptor rows")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be unique")
        norms = np.linalg.norm(d, axis=1)
        if np.any(norms <= 0.0) or not np.all(np.isfinite(d)):
            raise ValueError("reference descriptors must be finite with positive norm")
        object.__setattr__(self, "descriptors", d)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def m(self) -> int:
        return self.descriptors.shape[0]


@dataclass(frozen=True)
class SemanticField:
    """K x M per-point similarities in [-1, 1]; unsupported rows are -1."""

    similarities: np.ndarray  # (K, M) float64

    def __post_init__(self) -> None:
        s = np.asarray(self.similarities, dtype=np.float64)
        if s.ndim != 2:
            raise ValueError("similarities must be (K, M)")
        if not np.all(np.isfinite(s)):
            raise ValueError("similarities must be finite")
        if np.any(s < -1.0) or np.any(s > 1.0):
            raise ValueError("similarities must lie in [-1, 1]")
        object.__setattr__(self, "similarities", s)


@dataclass(frozen=True)
class PolicyObservation:
    """What the policy sees at one timestep."""

    points: np.ndarray  # (K, 3) meters
    channels: np.ndarray  # (K, M) similarities (or zeros when ablated)
    proprio: np.ndarray  # robot state vector, meters + grip
    pad_mask: np.ndarray  # (K,) bool
    support_mask: np.ndarray  # (K,) bool

    def __post_init__(self) -> None:
        k = self.points.shape[0]
        if self.points.shape != (k, 3) or self.channels.shape[0] != k:
            raise ValueError("points must be (K, 3) with matching channels")
        if self.pad_mask.shape != (k,) or self.support_mask.shape != (k,):
            raise ValueError("masks must be (K,)")
        for arr in (self.points, self.channels, self.proprio):
            if not np.all(np.isfinite(arr)):
                raise ValueError("observation arrays must be finite")


def select_reference_descriptors(
    ref_views: Sequence[tuple[FeatureImage, PixelLists]],
) -> ReferenceDescriptorSet:
    """Average hand-selected pixel features into one descriptor per part.

    ``ref_views`` pairs each reference image with per-part pixel lists in
    that image; a part may appear in any subset of the images. The part
    order of the result follows first appearance across views.
    """
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for img, parts in ref_views:
        for name, pixels in parts.items():
            if name not in sums:
                sums[name] = np.zeros(img.feature_dim)
                counts[name] = 0
            for uv in pixels:
                f, ok = bilinear_sample(img, np.asarray(uv, dtype=np.float64))
                if not ok:
                    raise ValueError(f"selection pixel out of bounds for part {name!r}")
                sums[name] += f
                counts[name] += 1
    empty = [name for name, c in counts.items() if c == 0]
    if not sums:
        raise ValueError("no parts selected")
    if empty:
        raise ValueError(f"no pixels selected for part {empty[0]!r}")
    labels = tuple(sums.keys())
    descriptors = np.stack([sums[name] / counts[name] for name in labels])
    return ReferenceDescriptorSet(descriptors=descriptors, labels=labels)


def compute_semantic_field(
    field: DescriptorField, refs: ReferenceDescriptorSet
) -> SemanticField:
    """Cosine similarity of every fused descriptor against every reference.

    Rows that are unsupported, or whose descriptor has zero norm (nothing
    to compare), are set to the sentinel -1 across all M columns.
    """
    if field.feature_dim != refs.descriptors.shape[1]:
        raise ValueError("field and references disagree on feature dimension")
    d = field.descriptors
    d_norm = np.linalg.norm(d, axis=1)
    r_norm = np.linalg.norm(refs.descriptors, axis=1)
    usable = field.support_mask & (d_norm > 0.0)
    denom = np.where(usable, d_norm, 1.0)
    sims = (d @ refs.descriptors.T) / (denom[:, None] * r_norm[None, :])
    # Float round-off can push |cos| a hair past 1; clamp to the contract.
    sims = np.clip(sims, -1.0, 1.0)
    sims = np.where(usable[:, None], sims, UNSUPPORTED_SENTINEL)
    return SemanticField(similarities=sims)


def assemble_observation(
    field: DescriptorField,
    sem: SemanticField,
    robot: np.ndarray,
    ablate_semantics: bool = False,
) -> PolicyObservation:
    """Bundle the field and similarities into the policy's input.

    Ablation zeroes the semantic block instead of removing it, so both
    arms of the semantics-vs-geometry comparison share one architecture.
    """
    if sem.similarities.shape[0] != field.k:
        raise ValueError("semantic field does not match the descriptor field")
    channels = (
        np.zeros_like(sem.similarities) if ablate_semantics else sem.similarities
    )
    return PolicyObservation(
        points=field.points,
        channels=channels,
        proprio=np.asarray(robot, dtype=np.float64),
        pad_mask=field.pad_mask,
        support_mask=field.support_mask,
    )


def save_reference_selection(
    path: str | Path,
    parts: Mapping[str, Sequence[tuple[int, float, float]]],
    images: Sequence[str] | None = None,
) -> None:
    """Write a reference-selection file.

    JSON with per-part arrays of (image_index, u, v) continuous pixel
    coordinates; an optional ``images`` list names the feature-image files
    the indices refer to.
    """
    payload: dict = {
        "parts": {name: [[int(i), float(u), float(v)] for i, u, v in sel] for name, sel in parts.items()}
    }
    if images is not None:
        payload["images"] = list(images)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_reference_selection(
    path: str | Path,
) -> tuple[dict[str, list[tuple[int, float, float]]], list[str] | None]:
    """Read a reference-selection file; returns (parts, image names)."""
    payload = json.loads(Path(path).read_text())
    if "parts" not in payload or not payload["parts"]:
        raise ValueError("selection file has no parts")
    parts = {
        str(name): [(int(i), float(u), float(v)) for i, u, v in sel]
        for name, sel in sorted(payload["parts"].items())
    }
    images = payload.get("images")
    return parts, list(images) if images is not None else None


def references_from_selection(
    images: Sequence[FeatureImage],
    parts: Mapping[str, Sequence[tuple[int, float, float]]],
) -> ReferenceDescriptorSet:
    """Regroup flat (image_index, u, v) selections per view and average."""
    per_view: list[dict[str, list[tuple[float, float]]]] = [dict() for _ in images]
    for name in parts:
        if not parts[name]:
            raise ValueError(f"no pixels selected for part {name!r}")
        for i, u, v in parts[name]:
            if not 0 <= i < len(images):
                raise ValueError(f"image index {i} out of range for part {name!r}")
            per_view[i].setdefault(name, []).append((u, v))
    # Seed part order deterministically even if a part's first pixels sit
    # in a later image.
    ordered: list[tuple[FeatureImage, dict[str, list[tuple[float, float]]]]] = []
    names = list(parts.keys())
    first: dict[str, list[tuple[float, float]]] = {n: [] for n in names}
    if per_view:
        merged0 = dict(first)
        merged0.update(per_view[0])
        ordered.append((images[0], merged0))
        for img, sel in zip(images[1:], per_view[1:]):
            ordered.append((img, sel))
    refs = select_reference_descriptors(ordered)
    if tuple(refs.labels) != tuple(names):
        raise AssertionError("part order drifted during selection")
    return refs
