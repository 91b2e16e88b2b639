from pathlib import Path

import pytest

from trackcascade import (
    BoundingBox,
    ClassMap,
    Detection,
    DetectionStore,
    SequenceMeta,
    write_detections,
    write_meta,
)

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir() -> Path:
    return DATA


def make_store(records) -> DetectionStore:
    """records: iterable of (frame, class_id, score, x1, y1, x2, y2)."""
    store = DetectionStore()
    for frame, class_id, score, x1, y1, x2, y2 in records:
        store.add(Detection(BoundingBox(x1, y1, x2, y2), class_id, score, frame))
    return store


def write_sequence(
    tmp: Path,
    meta: SequenceMeta,
    proposal: DetectionStore,
    refine: DetectionStore,
    class_map: ClassMap,
    labels_text: str | None = None,
) -> Path:
    seq = tmp / meta.sequence_id
    seq.mkdir(parents=True, exist_ok=True)
    write_meta(meta, seq / "meta.cfg")
    write_detections(proposal.all(), class_map, seq / "proposal.txt")
    write_detections(refine.all(), class_map, seq / "refine.txt")
    if labels_text is not None:
        (seq / "labels.txt").write_text(labels_text)
    return seq
