"""Pseudo-labeling from external-detector predictions, dataset export, and
AP/AR/mAP/mAR detection evaluation.

File formats (normalized decimals, space separated, one file per image,
file stem = image id):
  ground truth:  "class_id cx cy w h"
  predictions:   "class_id cx cy w h confidence"
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, PreconditionError
from .images import save_image
from .labels import ClassLabel, ClassVocabulary
from .patchset import DefectAnnotation, write_annotations

log = logging.getLogger(__name__)

DEFAULT_IOU_MIN = 0.5
DEFAULT_CONF_MIN = 0.25


@dataclass(frozen=True)
class Detection:
    label: ClassLabel
    bbox: tuple[float, float, float, float]  # normalized (cx, cy, w, h)
    confidence: float

    def __post_init__(self):
        if not np.isfinite(self.confidence) or not 0.0 <= self.confidence <= 1.0:
            raise PreconditionError(f"confidence outside [0,1]: {self.confidence}")


@dataclass
class DetectionSet:
    per_image: dict[str, list[Detection]]
    vocab: ClassVocabulary


def iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    """Intersection-over-union of two normalized (cx, cy, w, h) boxes."""
    ax1, ay1, ax2, ay2 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx1, by1, bx2, by2 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def ingest_predictions(path: str | Path, vocab: ClassVocabulary) -> DetectionSet:
    """Parse a directory of per-image prediction files (or a single file)."""
    path = Path(path)
    files = sorted(path.glob("*.txt")) if path.is_dir() else [path]
    per_image: dict[str, list[Detection]] = {}
    for f in files:
        dets: list[Detection] = []
        for lineno, line in enumerate(f.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ParseError(f"{f}:{lineno}: expected 'class_id cx cy w h confidence'")
            try:
                cid = int(parts[0])
                cx, cy, w, h, conf = (float(p) for p in parts[1:])
            except ValueError:
                raise ParseError(f"{f}:{lineno}: malformed number") from None
            try:
                label = vocab.by_id(cid)
            except KeyError:
                raise ParseError(f"{f}:{lineno}: unknown class id {cid}") from None
            if not (0 <= cx <= 1 and 0 <= cy <= 1 and 0 < w <= 1 and 0 < h <= 1):
                raise ParseError(f"{f}:{lineno}: bbox out of range")
            if not 0.0 <= conf <= 1.0:
                raise ParseError(f"{f}:{lineno}: confidence out of range")
            dets.append(Detection(label=label, bbox=(cx, cy, w, h), confidence=conf))
        per_image[f.stem] = dets
    return DetectionSet(per_image=per_image, vocab=vocab)


@dataclass
class AuditReport:
    per_class_intended: dict[str, int]
    per_class_detected: dict[str, int]
    agreement: float | None          # matched fraction of intended placements
    flagged_images: list[str]        # images with zero surviving detections

    def to_text(self) -> str:
        lines = ["pseudo-label audit"]
        names = sorted(set(self.per_class_intended) | set(self.per_class_detected))
        for n in names:
            lines.append(
                f"  {n}: intended {self.per_class_intended.get(n, 0)}, "
                f"detected {self.per_class_detected.get(n, 0)}"
            )
        if self.agreement is not None:
            lines.append(f"  agreement: {self.agreement:.1%}")
        lines.append(f"  flagged images: {len(self.flagged_images)}")
        return "\n".join(lines) + "\n"


def pseudo_label(
    dets: DetectionSet,
    conf_min: float = DEFAULT_CONF_MIN,
    expected: dict[str, list[DefectAnnotation]] | None = None,
    iou_min: float = DEFAULT_IOU_MIN,
) -> tuple[dict[str, list[DefectAnnotation]], AuditReport]:
    """Promote confident detections to ground-truth annotations, with an
    audit against intended placements when those are available."""
    if not 0.0 <= conf_min <= 1.0:
        raise PreconditionError(f"conf_min outside [0,1]: {conf_min}")
    annotations: dict[str, list[DefectAnnotation]] = {}
    detected_counts: dict[str, int] = {}
    flagged = []
    for image_id, ds in sorted(dets.per_image.items()):
        kept = [d for d in ds if d.confidence >= conf_min]
        if not kept:
            flagged.append(image_id)
        annotations[image_id] = [DefectAnnotation(label=d.label, bbox=d.bbox) for d in kept]
        for d in kept:
            detected_counts[d.label.name] = detected_counts.get(d.label.name, 0) + 1

    intended_counts: dict[str, int] = {}
    agreement = None
    if expected is not None:
        matched = total = 0
        for image_id, intended in expected.items():
            kept = annotations.get(image_id, [])
            used = [False] * len(kept)
            for ann in intended:
                intended_counts[ann.label.name] = intended_counts.get(ann.label.name, 0) + 1
                total += 1
                for i, got in enumerate(kept):
                    if used[i] or got.label.id != ann.label.id:
                        continue
                    if iou(got.bbox, ann.bbox) >= iou_min:
                        used[i] = True
                        matched += 1
                        break
        agreement = matched / total if total else None
    return annotations, AuditReport(
        per_class_intended=intended_counts,
        per_class_detected=detected_counts,
        agreement=agreement,
        flagged_images=flagged,
    )


# ---------------------------------------------------------------------------
# dataset export


@dataclass(frozen=True)
class ExportItem:
    image_id: str
    image: np.ndarray
    annotations: tuple[DefectAnnotation, ...]
    source: str  # "real" or "synthetic"


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise PreconditionError("split fractions must sum to 1")


def export_dataset(
    items: list[ExportItem],
    split_spec: SplitSpec,
    mixing: str,
    out_dir: str | Path,
) -> Path:
    """Write images, per-image annotation files, and a manifest with split
    membership and per-class instance counts. Returns the manifest path."""
    if mixing not in ("real-only", "synthetic-only", "combined"):
        raise PreconditionError(f"unknown mixing mode {mixing!r}")
    if mixing == "real-only":
        items = [i for i in items if i.source == "real"]
    elif mixing == "synthetic-only":
        items = [i for i in items if i.source == "synthetic"]
    else:
        if not any(i.source == "real" for i in items) or not any(
            i.source == "synthetic" for i in items
        ):
            raise PreconditionError("combined mode requires both real and synthetic items")
    if not items:
        raise PreconditionError("empty source after mixing filter")

    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)

    order = sorted(items, key=lambda i: i.image_id)
    rng = np.random.default_rng(split_spec.rng_seed)
    perm = rng.permutation(len(order))
    n = len(order)
    n_train = int(round(split_spec.train * n))
    n_val = int(round(split_spec.val * n))
    split_of = {}
    for rank, idx in enumerate(perm):
        split_of[order[idx].image_id] = (
            "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
        )

    class_counts: dict[str, int] = {}
    lines = []
    for item in order:
        img_path = out_dir / "images" / f"{item.image_id}.png"
        ann_path = out_dir / "labels" / f"{item.image_id}.txt"
        save_image(img_path, item.image)
        write_annotations(ann_path, list(item.annotations))
        for a in item.annotations:
            class_counts[a.label.name] = class_counts.get(a.label.name, 0) + 1
        lines.append(
            f"{split_of[item.image_id]} images/{item.image_id}.png labels/{item.image_id}.txt"
        )

    summary = [f"# mixing: {mixing}", f"# Total Images: {len(order)}"]
    for name in sorted(class_counts):
        summary.append(f"# {name}: {class_counts[name]}")
    manifest = out_dir / "manifest.txt"
    manifest.write_text("\n".join(summary + lines) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# AP / AR evaluation


@dataclass
class ClassEval:
    ap: float
    ar: float
    pr_points: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class EvalResult:
    per_class: dict[str, ClassEval]
    map: float
    mar: float
    iou_min: float

    def to_text(self) -> str:
        lines = [f"evaluation at IoU >= {self.iou_min}"]
        for name in sorted(self.per_class):
            ce = self.per_class[name]
            lines.append(f"  {name}: AP {ce.ap:.4f}  AR {ce.ar:.4f}")
        lines.append(f"  mAP {self.map:.4f}  mAR {self.mar:.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["class,ap,ar"]
        for name in sorted(self.per_class):
            ce = self.per_class[name]
            rows.append(f"{name},{ce.ap:.6f},{ce.ar:.6f}")
        rows.append(f"mean,{self.map:.6f},{self.mar:.6f}")
        return "\n".join(rows) + "\n"


def _ranked_tp_fp(
    dets: list[tuple[str, int, Detection]],
    truth_boxes: dict[str, list[DefectAnnotation]],
    iou_min: float,
) -> tuple[list[bool], int]:
    """Greedy one-to-one matching in confidence order (stable tie-break by
    image id then input order). Returns per-detection TP flags and GT count."""
    dets = sorted(dets, key=lambda t: (-t[2].confidence, t[0], t[1]))
    matched: dict[str, list[bool]] = {
        img: [False] * len(boxes) for img, boxes in truth_boxes.items()
    }
    flags = []
    for img, _, det in dets:
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(truth_boxes.get(img, [])):
            if matched.get(img, [])[j]:
                continue
            v = iou(det.bbox, gt.bbox)
            if v >= iou_min and v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0:
            matched[img][best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    n_gt = sum(len(b) for b in truth_boxes.values())
    return flags, n_gt


def _ap_from_flags(flags: list[bool], n_gt: int) -> tuple[float, float, list[tuple[float, float]]]:
    """All-points-interpolated AP and final recall from ranked TP flags."""
    if n_gt == 0:
        return 0.0, 0.0, []
    tp = np.cumsum(np.asarray(flags, dtype=np.float64)) if flags else np.array([])
    if len(tp) == 0:
        return 0.0, 0.0, []
    fp = np.arange(1, len(flags) + 1) - tp
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # precision envelope, then sum over recall increments
    env = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, env):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap), float(recall[-1]), list(zip(recall.tolist(), precision.tolist()))


def evaluate(
    preds: DetectionSet,
    truth: dict[str, list[DefectAnnotation]],
    iou_min: float = DEFAULT_IOU_MIN,
) -> EvalResult:
    """Per-class AP/AR with greedy ranked matching; mAP/mAR are unweighted
    means over classes that have ground truth."""
    if not 0.0 < iou_min < 1.0:
        raise PreconditionError(f"iou_min outside (0,1): {iou_min}")
    truth_ids = {a.label.id for anns in truth.values() for a in anns}
    class_ids = {d.label.id for ds in preds.per_image.values() for d in ds}
    for cid in class_ids:
        try:
            preds.vocab.by_id(cid)
        except KeyError:
            raise PreconditionError(f"predicted class id {cid} absent from vocabulary") from None
    eval_ids = sorted(truth_ids | class_ids)

    per_class: dict[str, ClassEval] = {}
    means_ap, means_ar = [], []
    for cid in eval_ids:
        label = preds.vocab.by_id(cid)
        dets = [
            (img, k, d)
            for img, ds in preds.per_image.items()
            for k, d in enumerate(ds)
            if d.label.id == cid
        ]
        gts = {
            img: [a for a in anns if a.label.id == cid] for img, anns in truth.items()
        }
        flags, n_gt = _ranked_tp_fp(dets, gts, iou_min)
        ap, ar, pr = _ap_from_flags(flags, n_gt)
        key = (
            label.name
            if len(preds.vocab.contexts()) == 1
            else f"{label.context}/{label.name}"
        )
        per_class[key] = ClassEval(ap=ap, ar=ar, pr_points=pr)
        if n_gt > 0:
            means_ap.append(ap)
            means_ar.append(ar)
    return EvalResult(
        per_class=per_class,
        map=float(np.mean(means_ap)) if means_ap else 0.0,
        mar=float(np.mean(means_ar)) if means_ar else 0.0,
        iou_min=iou_min,
    )
