"""Subject records: image + landmark loading, schema validation, outputs.

Landmark CSV format: header ``structure,point_index,x,y``, one row per
point, point_index 0-based in annotation order, pixel coordinates with the
origin at the top-left corner.  Transform files hold 9 whitespace-separated
decimals (row-major 3x3).  Registered outputs carry the ``_registered``
suffix next to the subject label, e.g. ``36.1_registered.png``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Mapping

import numpy as np
from PIL import Image

from .errors import ParseError, ReferenceNotFound, SchemaViolation
from .transform import (Affine2D, as_image, mirror_to_convention,
                        warp_image, warp_landmarks)

if TYPE_CHECKING:  # pragma: no cover
    from .registration import RegistrationResult

# Expected landmark count per structure.
STRUCTURE_SCHEMA: dict[str, int] = {
    "skull": 4,
    "thalami": 3,
    "cerebellum": 8,
    "cavum": 4,
    "sylvius": 3,
    "midline": 2,
}

LandmarkSet = dict[str, np.ndarray]

_CSV_HEADER = ["structure", "point_index", "x", "y"]


@dataclass
class SubjectRecord:
    """One scan: identity, image, landmarks and an optional skull mask."""

    subject_id: int
    scan_index: int
    image: np.ndarray
    landmarks: LandmarkSet
    skull_mask: np.ndarray | None = None

    @property
    def label(self) -> str:
        return format_subject_label(self.subject_id, self.scan_index)

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]


def parse_subject_label(label: str) -> tuple[int, int]:
    """Parse "36" -> (36, 0) and "36.1" -> (36, 1)."""
    parts = str(label).split(".")
    try:
        if len(parts) == 1:
            return int(parts[0]), 0
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise ParseError(f"cannot parse subject label '{label}'")


def format_subject_label(subject_id: int, scan_index: int = 0) -> str:
    return f"{subject_id}.{scan_index}" if scan_index else str(subject_id)


def validate_landmarks(landmarks: Mapping[str, np.ndarray],
                       width: int | None = None,
                       height: int | None = None) -> LandmarkSet:
    """Check structure names, point counts and (optionally) pixel bounds."""
    out: LandmarkSet = {}
    for name, pts in landmarks.items():
        if name not in STRUCTURE_SCHEMA:
            raise SchemaViolation(f"unknown structure '{name}'")
        pts = np.asarray(pts, dtype=float)
        expected = STRUCTURE_SCHEMA[name]
        if pts.shape != (expected, 2):
            raise SchemaViolation(
                f"structure '{name}' has {len(pts)} points, expected {expected}")
        if not np.all(np.isfinite(pts)):
            raise SchemaViolation(f"structure '{name}' has non-finite coordinates")
        if width is not None and height is not None:
            if (pts[:, 0] < 0).any() or (pts[:, 0] >= width).any() \
                    or (pts[:, 1] < 0).any() or (pts[:, 1] >= height).any():
                raise SchemaViolation(
                    f"structure '{name}' has landmarks outside the "
                    f"{width}x{height} frame")
        out[name] = pts
    return out


def load_image(path) -> np.ndarray:
    """Load a grayscale raster as a float array (8-bit scale preserved)."""
    path = Path(path)
    with Image.open(path) as im:
        if im.mode not in ("L", "I", "I;16", "F", "1"):
            im = im.convert("L")
        return np.asarray(im, dtype=float)


def save_image(img, path) -> Path:
    """Write a float image as an 8-bit grayscale raster (clipped to 0..255)."""
    path = Path(path)
    arr = np.clip(np.rint(as_image(img)), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)
    return path


def load_landmarks_csv(path) -> LandmarkSet:
    """Parse a landmark CSV; validates schema counts but not pixel bounds."""
    path = Path(path)
    rows: dict[str, dict[int, tuple[float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _CSV_HEADER:
            raise ParseError(
                f"{path}: expected header {','.join(_CSV_HEADER)!r}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            name = row[0]
            try:
                idx = int(row[1])
                x, y = float(row[2]), float(row[3])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if name not in STRUCTURE_SCHEMA:
                raise SchemaViolation(f"{path}:{lineno}: unknown structure '{name}'")
            slot = rows.setdefault(name, {})
            if idx in slot:
                raise SchemaViolation(f"{path}:{lineno}: duplicate point "
                                      f"{idx} for '{name}'")
            slot[idx] = (x, y)
    landmarks: LandmarkSet = {}
    for name, slot in rows.items():
        expected = STRUCTURE_SCHEMA[name]
        if sorted(slot) != list(range(expected)):
            raise SchemaViolation(
                f"{path}: structure '{name}' has {len(slot)} points "
                f"(indices {sorted(slot)}), expected {expected}")
        landmarks[name] = np.array([slot[i] for i in range(expected)], dtype=float)
    return landmarks


def save_landmarks_csv(landmarks: Mapping[str, np.ndarray], path) -> Path:
    """Write a landmark CSV in schema order with round-trip float precision."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_CSV_HEADER)
        for name in STRUCTURE_SCHEMA:
            if name not in landmarks:
                continue
            for i, (x, y) in enumerate(np.asarray(landmarks[name], dtype=float)):
                writer.writerow([name, i, repr(float(x)), repr(float(y))])
    return path


def load_subject(image_path, landmarks_path) -> SubjectRecord:
    """Load one subject; the label is parsed from the image file stem."""
    image_path = Path(image_path)
    subject_id, scan_index = parse_subject_label(image_path.stem)
    image = load_image(image_path)
    landmarks = load_landmarks_csv(landmarks_path)
    h, w = image.shape
    landmarks = validate_landmarks(landmarks, w, h)
    return SubjectRecord(subject_id=subject_id, scan_index=scan_index,
                         image=image, landmarks=landmarks)


def save_transform_txt(m: Affine2D, path) -> Path:
    path = Path(path)
    rows = [" ".join(repr(float(v)) for v in row) for row in m.m]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def load_transform_txt(path) -> Affine2D:
    values = Path(path).read_text(encoding="utf-8").split()
    if len(values) != 9:
        raise ParseError(f"{path}: expected 9 numbers, got {len(values)}")
    try:
        m = np.array([float(v) for v in values]).reshape(3, 3)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return Affine2D(m)


def save_registered(record: SubjectRecord, result: "RegistrationResult",
                    out_dir, *, output_frame: Affine2D | None = None,
                    image_format: str = "png") -> dict[str, Path]:
    """Write the warped image, warped landmark CSV and the transform file.

    ``output_frame`` post-composes an extra transform (e.g. the reference's
    own centring) so outputs land in a common frame; the transform file
    always stores the full matrix that produced the saved rasters.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    full = result.transform if output_frame is None \
        else Affine2D(output_frame.m @ result.transform.m)
    label = record.label
    ext = "jpg" if image_format == "jpeg" else "png"
    h, w = record.image.shape
    img_path = out_dir / f"{label}_registered.{ext}"
    save_image(warp_image(record.image, full, w, h), img_path)
    csv_path = save_landmarks_csv(warp_landmarks(full, record.landmarks),
                                  out_dir / f"{label}_registered.csv")
    txt_path = save_transform_txt(full, out_dir / f"{label}_transform.txt")
    return {"image": img_path, "landmarks": csv_path, "transform": txt_path}


def select_reference(cohort, subject_id: int | None = None,
                     scan_index: int = 0) -> SubjectRecord:
    """Pick the reference record from a cohort (default: subject 10, scan 0)."""
    cohort = list(cohort)
    if not cohort:
        raise ReferenceNotFound("cohort is empty")
    want_id = 10 if subject_id is None else subject_id
    for record in cohort:
        if record.subject_id == want_id and record.scan_index == scan_index:
            return record
    raise ReferenceNotFound(
        f"reference subject '{format_subject_label(want_id, scan_index)}' "
        "not found in cohort")


def standardize_orientation(record: SubjectRecord) -> tuple[SubjectRecord, bool]:
    """Mirror a record to the anterior-left convention when needed."""
    img, lm, mirrored = mirror_to_convention(record.image, record.landmarks)
    if not mirrored:
        return record, False
    mask = record.skull_mask
    if mask is not None:
        mask = np.fliplr(mask).copy()
    return replace(record, image=img, landmarks=lm, skull_mask=mask), True


def find_cohort(input_dir) -> list[SubjectRecord]:
    """Load all subjects from a directory of ``<label>.png`` + ``<label>.csv``
    pairs, attaching ``<label>_mask.png`` masks when present."""
    from .segmentation import load_mask

    input_dir = Path(input_dir)
    records = []
    images = sorted(
        (p for p in input_dir.glob("*.png")
         if not p.stem.endswith(("_mask", "_registered"))),
        key=lambda p: parse_subject_label(p.stem))
    for img_path in images:
        csv_path = img_path.with_suffix(".csv")
        if not csv_path.exists():
            continue
        record = load_subject(img_path, csv_path)
        mask_path = input_dir / f"{img_path.stem}_mask.png"
        if mask_path.exists():
            record.skull_mask = load_mask(mask_path, record.width, record.height)
        records.append(record)
    return records
