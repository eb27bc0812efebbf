"""Detection and track CSV files, plus an optional KITTI-style text formatter."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from ..errors import ConfigurationError
from .tracker import Detection, TrackRecord

DETECTION_COLUMNS = ("frame", "px", "py", "pz", "l", "w", "h", "score")
TRACK_COLUMNS = ("frame", "track_id", "px", "py", "pz", "l", "w", "h", "vx", "vy", "vz", "status")


def parse_detections(text: str) -> list[Detection]:
    """Parse detection CSV text; the header row is mandatory.

    Raises:
        ConfigurationError: on a missing/incorrect header or a malformed row.
    """
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != DETECTION_COLUMNS:
        raise ConfigurationError(f"detection CSV header must be {','.join(DETECTION_COLUMNS)}")
    out = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(DETECTION_COLUMNS):
            raise ConfigurationError(f"line {line_no}: expected 8 fields, got {len(row)}")
        try:
            frame = int(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ConfigurationError(f"line {line_no}: {exc}") from None
        try:
            out.append(Detection(frame, tuple(vals[0:3]), tuple(vals[3:6]), vals[6]))
        except ConfigurationError as exc:
            raise ConfigurationError(f"line {line_no}: {exc}") from None
    return out


def read_detections(path) -> list[Detection]:
    return parse_detections(Path(path).read_text())


def detections_csv(detections) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DETECTION_COLUMNS)
    for d in detections:
        w.writerow([d.frame, *(f"{v:.6f}" for v in d.center + d.size), f"{d.score:.6f}"])
    return buf.getvalue()


def tracks_csv(records: list[TrackRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACK_COLUMNS)
    for r in records:
        w.writerow([r.frame, r.track_id, *(f"{v:.6f}" for v in r.x), r.status])
    return buf.getvalue()


def kitti_lines(records: list[TrackRecord], obj_type: str = "Car") -> list[str]:
    """Records in the KITTI tracking label layout.

    Field order: frame, track id, type, truncated, occluded, alpha, 2D box
    (left, top, right, bottom), 3D size (h, w, l), location (x, y, z),
    rotation_y, score. Fields the tracker does not produce are written as
    the devkit's "unknown" values (-1, -10 or 0).
    """
    lines = []
    for r in records:
        px, py, pz, l, w, h = r.x[:6]
        lines.append(
            f"{r.frame} {r.track_id} {obj_type} -1 -1 -10 0 0 0 0 "
            f"{h:.4f} {w:.4f} {l:.4f} {px:.4f} {py:.4f} {pz:.4f} 0 1"
        )
    return lines
