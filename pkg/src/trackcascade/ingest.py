"""File formats, class naming, and the synthetic sequence generator.

Three text formats, all whitespace separated with '#' comments:

  detections   frame class score x1 y1 x2 y2
  labels       KITTI tracking label lines (17 or 18 fields)
  meta         key = value under a [sequence] section

Floats are written with Python's shortest round-trip repr, so
parse(write(parse(f))) == parse(f) holds exactly.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .geometry import BoundingBox, Detection
from .metrics import GroundTruthTrack, GtEntry

DONTCARE = "dontcare"
DONTCARE_ID = -1


class ClassMap:
    """Case-insensitive class-name <-> id mapping.

    Configured names get ids 0..n-1 in the given order; unknown names seen in
    files are registered with the next free id and flagged. 'DontCare' always
    maps to -1.
    """

    def __init__(self, names: Sequence[str]):
        self._ids: dict[str, int] = {}
        self._names: dict[int, str] = {DONTCARE_ID: DONTCARE}
        for name in names:
            canon = name.strip().lower()
            if canon == DONTCARE or canon in self._ids:
                continue
            self._register(canon)
        self.configured = frozenset(self._ids.values())
        self.flagged: set[str] = set()

    def _register(self, canon: str) -> int:
        class_id = len(self._ids)
        self._ids[canon] = class_id
        self._names[class_id] = canon
        return class_id

    def id_of(self, name: str) -> int:
        canon = name.strip().lower()
        if canon == DONTCARE:
            return DONTCARE_ID
        if canon not in self._ids:
            self.flagged.add(canon)
            return self._register(canon)
        return self._ids[canon]

    def name_of(self, class_id: int) -> str:
        return self._names[class_id]

    def is_configured(self, class_id: int) -> bool:
        return class_id in self.configured


@dataclass(frozen=True)
class SequenceMeta:
    sequence_id: str
    frame_count: int
    frame_w: float
    frame_h: float
    frame_rate: float = 10.0

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        if self.frame_w <= 0 or self.frame_h <= 0:
            raise ValueError("frame dimensions must be positive")


class DetectionStore:
    """Frame-indexed detections, preserving file order within each frame."""

    def __init__(self, by_frame: dict[int, list[Detection]] | None = None):
        self._by_frame = by_frame or {}

    def get(self, frame_index: int) -> list[Detection]:
        return list(self._by_frame.get(frame_index, []))

    def frames(self) -> list[int]:
        return sorted(self._by_frame)

    def all(self) -> list[Detection]:
        return [d for f in self.frames() for d in self._by_frame[f]]

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_frame.values())

    def add(self, det: Detection) -> None:
        self._by_frame.setdefault(det.frame_index, []).append(det)


def _data_lines(path: Path) -> Iterable[tuple[int, list[str]]]:
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read file: {exc}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def _parse_float(token: str, what: str, path: Path, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"bad {what} {token!r}", str(path), lineno) from None
    if math.isnan(value) or math.isinf(value):
        raise DataError(f"non-finite {what} {token!r}", str(path), lineno)
    return value


def _parse_int(token: str, what: str, path: Path, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise DataError(f"bad {what} {token!r}", str(path), lineno) from None


def parse_detections(path: str | Path, class_map: ClassMap) -> DetectionStore:
    """Read a detection file; every malformed record is a located error."""
    path = Path(path)
    by_frame: dict[int, list[Detection]] = {}
    for lineno, fields in _data_lines(path):
        if len(fields) != 7:
            raise DataError(f"expected 7 fields, got {len(fields)}", str(path), lineno)
        frame = _parse_int(fields[0], "frame index", path, lineno)
        if frame < 0:
            raise DataError(f"negative frame index {frame}", str(path), lineno)
        score = _parse_float(fields[2], "score", path, lineno)
        if not 0.0 <= score <= 1.0:
            raise DataError(f"score {score} outside [0, 1]", str(path), lineno)
        x1, y1, x2, y2 = (
            _parse_float(t, "coordinate", path, lineno) for t in fields[3:7]
        )
        if x2 < x1 or y2 < y1:
            raise DataError(f"inverted box ({x1}, {y1}, {x2}, {y2})", str(path), lineno)
        det = Detection(BoundingBox(x1, y1, x2, y2), class_map.id_of(fields[1]), score, frame)
        by_frame.setdefault(frame, []).append(det)
    return DetectionStore(by_frame)


def write_detections(
    detections: Iterable[Detection], class_map: ClassMap, path: str | Path
) -> None:
    """Write detections sorted by frame, descending score, then box geometry."""
    ordered = sorted(
        detections,
        key=lambda d: (d.frame_index, -d.score, d.box.x1, d.box.y1, d.box.area, d.class_id),
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# frame class score x1 y1 x2 y2\n")
        for d in ordered:
            b = d.box
            fh.write(
                f"{d.frame_index} {class_map.name_of(d.class_id)} {d.score} "
                f"{b.x1} {b.y1} {b.x2} {b.y2}\n"
            )


@dataclass
class KittiLabels:
    """Parsed KITTI tracking labels: real tracks plus DontCare regions."""

    tracks: list[GroundTruthTrack]
    dontcare_by_frame: dict[int, list[BoundingBox]]
    class_names: dict[int, str]
    max_frame: int = 0


def parse_kitti_tracking_labels(path: str | Path, class_map: ClassMap) -> KittiLabels:
    """Read KITTI tracking labels into per-track frame sequences.

    DontCare lines become frame-indexed don't-care regions instead of tracks;
    frames within a track must be strictly increasing.
    """
    path = Path(path)
    entries: dict[int, list[GtEntry]] = {}
    track_class: dict[int, int] = {}
    dontcare: dict[int, list[BoundingBox]] = {}
    max_frame = 0
    for lineno, fields in _data_lines(path):
        if len(fields) < 17:
            raise DataError(f"expected >= 17 fields, got {len(fields)}", str(path), lineno)
        frame = _parse_int(fields[0], "frame index", path, lineno)
        track_id = _parse_int(fields[1], "track id", path, lineno)
        class_id = class_map.id_of(fields[2])
        truncated = _parse_float(fields[3], "truncation", path, lineno)
        occluded = _parse_int(fields[4], "occlusion", path, lineno)
        x1, y1, x2, y2 = (_parse_float(t, "coordinate", path, lineno) for t in fields[6:10])
        if x2 < x1 or y2 < y1:
            raise DataError(f"inverted box ({x1}, {y1}, {x2}, {y2})", str(path), lineno)
        max_frame = max(max_frame, frame)
        box = BoundingBox(x1, y1, x2, y2)
        if class_id == DONTCARE_ID:
            dontcare.setdefault(frame, []).append(box)
            continue
        prior = entries.setdefault(track_id, [])
        if prior and frame <= prior[-1].frame_index:
            raise DataError(
                f"track {track_id}: frame {frame} not after {prior[-1].frame_index}",
                str(path),
                lineno,
            )
        prior.append(GtEntry(frame, box, truncated, occluded))
        track_class[track_id] = class_id

    tracks = [
        GroundTruthTrack(tid, track_class[tid], entries[tid]) for tid in sorted(entries)
    ]
    names = {cid: class_map.name_of(cid) for cid in set(track_class.values())}
    return KittiLabels(tracks, dontcare, names, max_frame)


def write_tracks(labels: KittiLabels, class_map: ClassMap, path: str | Path) -> None:
    """Write tracks back out in KITTI tracking label format (17 fields)."""
    rows: list[tuple[int, int, str, float, int, BoundingBox]] = []
    for t in labels.tracks:
        for e in t.frames:
            rows.append((e.frame_index, t.track_id, class_map.name_of(t.class_id),
                         e.truncated, e.occluded, e.box))
    for frame, boxes in labels.dontcare_by_frame.items():
        for b in boxes:
            rows.append((frame, -1, DONTCARE, -1.0, -1, b))
    rows.sort(key=lambda r: (r[0], r[1], r[5].x1, r[5].y1))
    with open(path, "w", encoding="utf-8") as fh:
        for frame, tid, name, trunc, occ, b in rows:
            fh.write(
                f"{frame} {tid} {name} {trunc} {occ} -10 "
                f"{b.x1} {b.y1} {b.x2} {b.y2} -1 -1 -1 -1000 -1000 -1000 -10\n"
            )


def parse_meta(path: str | Path) -> SequenceMeta:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
        sec = parser["sequence"]
        return SequenceMeta(
            sequence_id=sec.get("sequence_id", path.parent.name),
            frame_count=sec.getint("frame_count"),
            frame_w=sec.getfloat("frame_w"),
            frame_h=sec.getfloat("frame_h"),
            frame_rate=sec.getfloat("frame_rate", fallback=10.0),
        )
    except OSError as exc:
        raise DataError(f"cannot read meta: {exc}", str(path)) from None
    except (configparser.Error, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad sequence meta: {exc}", str(path)) from None


def write_meta(meta: SequenceMeta, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("[sequence]\n")
        fh.write(f"sequence_id = {meta.sequence_id}\n")
        fh.write(f"frame_count = {meta.frame_count}\n")
        fh.write(f"frame_w = {meta.frame_w}\n")
        fh.write(f"frame_h = {meta.frame_h}\n")
        fh.write(f"frame_rate = {meta.frame_rate}\n")


# --- synthetic sequences -------------------------------------------------


@dataclass(frozen=True)
class ObjectScript:
    """A scripted object: linear motion from an initial box between two frames."""

    name: str
    class_name: str
    entry_frame: int
    exit_frame: int  # inclusive
    box: BoundingBox
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)  # dx, dy, dwidth per frame

    def box_at(self, frame: int) -> BoundingBox:
        age = frame - self.entry_frame
        cx, cy = self.box.center
        width = self.box.width + self.velocity[2] * age
        height = width * (self.box.height / self.box.width)
        return BoundingBox.from_center(
            cx + self.velocity[0] * age, cy + self.velocity[1] * age, max(width, 0.0),
            max(height, 0.0),
        )


@dataclass(frozen=True)
class NoiseModel:
    """Detector-oracle noise: misses, false positives, jitter and scoring."""

    miss_prob: float = 0.0
    fp_per_frame: float = 0.0
    jitter: float = 0.0  # std-dev of per-corner Gaussian noise, pixels
    score_mean: float = 0.9
    score_sigma: float = 0.0
    fp_score_mean: float = 0.4
    fp_score_sigma: float = 0.0


@dataclass
class SyntheticScenario:
    name: str
    frame_count: int
    frame_w: float
    frame_h: float
    seed: int
    objects: list[ObjectScript]
    sources: dict[str, NoiseModel] = field(default_factory=dict)
    frame_rate: float = 10.0


def parse_scenario(path: str | Path) -> SyntheticScenario:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
        sec = parser["scenario"]
        scenario = SyntheticScenario(
            name=sec.get("name", path.stem),
            frame_count=sec.getint("frames"),
            frame_w=sec.getfloat("frame_w"),
            frame_h=sec.getfloat("frame_h"),
            seed=sec.getint("seed", fallback=0),
            objects=[],
            frame_rate=sec.getfloat("frame_rate", fallback=10.0),
        )
        for section in parser.sections():
            if section.startswith("object."):
                o = parser[section]
                coords = [float(v) for v in o.get("box").split()]
                vel = [float(v) for v in o.get("velocity", fallback="0 0").split()]
                while len(vel) < 3:
                    vel.append(0.0)
                scenario.objects.append(
                    ObjectScript(
                        name=section.split(".", 1)[1],
                        class_name=o.get("class"),
                        entry_frame=o.getint("entry"),
                        exit_frame=o.getint("exit"),
                        box=BoundingBox(*coords),
                        velocity=tuple(vel[:3]),
                    )
                )
            elif section.startswith("source."):
                s = parser[section]
                scenario.sources[section.split(".", 1)[1]] = NoiseModel(
                    miss_prob=s.getfloat("miss_prob", fallback=0.0),
                    fp_per_frame=s.getfloat("fp_per_frame", fallback=0.0),
                    jitter=s.getfloat("jitter", fallback=0.0),
                    score_mean=s.getfloat("score_mean", fallback=0.9),
                    score_sigma=s.getfloat("score_sigma", fallback=0.0),
                    fp_score_mean=s.getfloat("fp_score_mean", fallback=0.4),
                    fp_score_sigma=s.getfloat("fp_score_sigma", fallback=0.0),
                )
        return scenario
    except OSError as exc:
        raise DataError(f"cannot read scenario: {exc}", str(path)) from None
    except (configparser.Error, KeyError, TypeError, ValueError, AttributeError) as exc:
        raise DataError(f"bad scenario: {exc}", str(path)) from None


@dataclass
class SyntheticData:
    meta: SequenceMeta
    labels: KittiLabels
    detections: dict[str, DetectionStore]
    class_map: ClassMap


def _clip_entry(box: BoundingBox, frame_w: float, frame_h: float) -> tuple[BoundingBox, float] | None:
    clipped = box.clip(frame_w, frame_h)
    if clipped.area <= 0 or box.area <= 0:
        return None
    return clipped, 1.0 - clipped.area / box.area


def generate_synthetic(scenario: SyntheticScenario) -> SyntheticData:
    """Deterministic ground truth plus noisy oracle detections per source.

    A single RNG seeded from the scenario drives every draw in a fixed order
    (frames ascending, objects in script order, sources in name order), so a
    given scenario is reproducible bit for bit.
    """
    rng = np.random.default_rng(scenario.seed)
    class_names = sorted({o.class_name.strip().lower() for o in scenario.objects})
    class_map = ClassMap(class_names)

    tracks: dict[int, GroundTruthTrack] = {}
    for tid, obj in enumerate(scenario.objects, start=1):
        entries = []
        for frame in range(obj.entry_frame, min(obj.exit_frame, scenario.frame_count - 1) + 1):
            placed = _clip_entry(obj.box_at(frame), scenario.frame_w, scenario.frame_h)
            if placed is None:
                continue
            clipped, truncation = placed
            entries.append(GtEntry(frame, clipped, truncated=truncation, occluded=0))
        if entries:
            tracks[tid] = GroundTruthTrack(tid, class_map.id_of(obj.class_name), entries)

    stores: dict[str, DetectionStore] = {name: DetectionStore() for name in sorted(scenario.sources)}
    for frame in range(scenario.frame_count):
        for source_name in sorted(scenario.sources):
            noise = scenario.sources[source_name]
            store = stores[source_name]
            for tid, obj in enumerate(scenario.objects, start=1):
                track = tracks.get(tid)
                if track is None or not any(e.frame_index == frame for e in track.frames):
                    continue
                entry = next(e for e in track.frames if e.frame_index == frame)
                if rng.random() < noise.miss_prob:
                    continue
                corners = np.array([entry.box.x1, entry.box.y1, entry.box.x2, entry.box.y2])
                corners = corners + rng.normal(0.0, noise.jitter, size=4)
                x1, x2 = sorted((corners[0], corners[2]))
                y1, y2 = sorted((corners[1], corners[3]))
                box = BoundingBox(x1, y1, x2, y2).clip(scenario.frame_w, scenario.frame_h)
                score = float(np.clip(rng.normal(noise.score_mean, noise.score_sigma), 0.01, 0.999))
                if box.area > 0:
                    store.add(Detection(box, track.class_id, score, frame))
            for _ in range(int(rng.poisson(noise.fp_per_frame))):
                w = rng.uniform(20.0, 120.0)
                h = w * rng.uniform(0.5, 2.0)
                cx = rng.uniform(0.0, scenario.frame_w)
                cy = rng.uniform(0.0, scenario.frame_h)
                box = BoundingBox.from_center(cx, cy, w, h).clip(scenario.frame_w, scenario.frame_h)
                score = float(
                    np.clip(rng.normal(noise.fp_score_mean, noise.fp_score_sigma), 0.01, 0.999)
                )
                class_id = class_map.id_of(class_names[int(rng.integers(len(class_names)))])
                if box.area > 0:
                    store.add(Detection(box, class_id, score, frame))

    meta = SequenceMeta(
        sequence_id=scenario.name,
        frame_count=scenario.frame_count,
        frame_w=scenario.frame_w,
        frame_h=scenario.frame_h,
        frame_rate=scenario.frame_rate,
    )
    labels = KittiLabels(
        tracks=[tracks[tid] for tid in sorted(tracks)],
        dontcare_by_frame={},
        class_names={class_map.id_of(n): n for n in class_names},
        max_frame=scenario.frame_count - 1,
    )
    return SyntheticData(meta, labels, stores, class_map)


def write_sequence_dir(data: SyntheticData, out_dir: str | Path) -> None:
    """Write the standard sequence layout: meta.cfg, labels.txt, <source>.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_meta(data.meta, out / "meta.cfg")
    write_tracks(data.labels, data.class_map, out / "labels.txt")
    for name, store in sorted(data.detections.items()):
        write_detections(store.all(), data.class_map, out / f"{name}.txt")
