"""Line-space metrology: line scans, sub-pixel edges, CD / pitch / LER / LWR.

Conventions: features are vertical lines (use orientation="horizontal" to
transpose first); edge positions are fractional column indices; threshold
is a fraction of the image dynamic range, so every statistic is invariant
under positive affine intensity maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError

DEFAULT_THRESHOLD = 0.5
SMOOTH_WIDTH = 3  # moving-average width applied per row before crossing detection


@dataclass
class LineScanProfile:
    axis: str                 # "row-averaged" or "column-averaged"
    values: np.ndarray
    length: int


@dataclass
class RowEdges:
    positions: np.ndarray     # strictly increasing sub-pixel columns
    rising: np.ndarray        # bool, parallel to positions


@dataclass
class EdgeSet:
    rows: list[RowEdges]
    threshold_level: float


@dataclass
class MetrologyReport:
    cd_mean: float
    cd: list[float]
    pitch: float | None
    ler_sigma: float
    lwr_sigma: float
    n_lines: int

    def to_text(self) -> str:
        lines = [
            f"cd_mean: {self.cd_mean:.4f}",
            "cd: " + " ".join(f"{c:.4f}" for c in self.cd),
            f"pitch: {self.pitch:.4f}" if self.pitch is not None else "pitch: absent",
            f"ler_sigma: {self.ler_sigma:.4f}",
            f"lwr_sigma: {self.lwr_sigma:.4f}",
            f"n_lines: {self.n_lines}",
        ]
        return "\n".join(lines) + "\n"

    def to_csv_row(self) -> str:
        pitch = f"{self.pitch:.4f}" if self.pitch is not None else ""
        return (
            f"{self.cd_mean:.4f},{pitch},{self.ler_sigma:.4f},"
            f"{self.lwr_sigma:.4f},{self.n_lines}"
        )


@dataclass
class FieldDelta:
    absolute: float | None
    relative: float | None
    ok: bool


@dataclass
class DeltaReport:
    fields: dict[str, FieldDelta]
    ok: bool

    def to_text(self) -> str:
        out = []
        for name, d in self.fields.items():
            if d.absolute is None:
                out.append(f"{name}: absent")
            else:
                out.append(
                    f"{name}: abs {d.absolute:+.4f} rel {d.relative:+.2%} "
                    f"{'pass' if d.ok else 'FAIL'}"
                )
        out.append(f"overall: {'pass' if self.ok else 'FAIL'}")
        return "\n".join(out) + "\n"


def line_scan(img: np.ndarray, axis: str = "column-averaged") -> LineScanProfile:
    """Mean intensity profile along rows or columns."""
    if img.ndim != 2 or img.size == 0:
        raise PreconditionError("empty or non-2D image")
    if axis == "column-averaged":
        values = img.mean(axis=0)
    elif axis == "row-averaged":
        values = img.mean(axis=1)
    else:
        raise PreconditionError(f"unknown axis {axis!r}")
    return LineScanProfile(axis=axis, values=values, length=len(values))


def _smooth_rows(img: np.ndarray, width: int) -> np.ndarray:
    kernel = np.ones(width) / width
    pad = width // 2
    padded = np.pad(img, ((0, 0), (pad, pad)), mode="edge")
    out = np.empty_like(img, dtype=np.float64)
    for r in range(img.shape[0]):
        out[r] = np.convolve(padded[r], kernel, mode="valid")
    return out


def extract_edges(
    img: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
    smooth_width: int = SMOOTH_WIDTH,
) -> EdgeSet:
    """Per-row sub-pixel threshold crossings on lightly smoothed rows."""
    if img.ndim != 2 or img.size == 0:
        raise PreconditionError("empty or non-2D image")
    smoothed = _smooth_rows(np.asarray(img, dtype=np.float64), smooth_width)
    lo, hi = smoothed.min(), smoothed.max()
    if hi - lo <= 0:
        raise PreconditionError("constant image has no edges")
    level = lo + threshold * (hi - lo)

    rows = []
    for r in range(smoothed.shape[0]):
        row = smoothed[r]
        above = row >= level
        idx = np.nonzero(above[1:] != above[:-1])[0]
        positions = np.empty(len(idx))
        rising = np.empty(len(idx), dtype=bool)
        for k, i in enumerate(idx):
            # linear interpolation between samples i and i+1
            positions[k] = i + (level - row[i]) / (row[i + 1] - row[i])
            rising[k] = not above[i]
        rows.append(RowEdges(positions=positions, rising=rising))
    return EdgeSet(rows=rows, threshold_level=float(level))


def _paired_lines(edges: RowEdges) -> list[tuple[float, float]]:
    """Pair rising/falling edges into (left, right) lines, dropping
    border-truncated partials at the row ends."""
    pos, rising = edges.positions, edges.rising
    start = 0
    if len(pos) and not rising[0]:
        start = 1
    pairs = []
    i = start
    while i + 1 < len(pos):
        if rising[i] and not rising[i + 1]:
            pairs.append((pos[i], pos[i + 1]))
            i += 2
        else:
            i += 1
    return pairs


def measure(
    img: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
    orientation: str = "vertical",
    smooth_width: int = SMOOTH_WIDTH,
) -> MetrologyReport:
    """Full line-space metrology on an image with >= 1 complete line."""
    if orientation == "horizontal":
        img = np.asarray(img).T
    elif orientation != "vertical":
        raise PreconditionError(f"unknown orientation {orientation!r}")

    edge_set = extract_edges(img, threshold, smooth_width)
    per_row = [_paired_lines(r) for r in edge_set.rows]
    counts = [len(p) for p in per_row if len(p) > 0]
    if not counts:
        raise PreconditionError("no complete line found")
    n_lines = int(np.bincount(counts).argmax())
    if n_lines == 0:
        raise PreconditionError("no complete line found")
    usable = [p for p in per_row if len(p) == n_lines]
    if len(usable) < 2:
        raise PreconditionError("too few usable rows for statistics")

    left = np.array([[p[j][0] for j in range(n_lines)] for p in usable])
    right = np.array([[p[j][1] for j in range(n_lines)] for p in usable])

    # drop lines touching the left/right image borders
    margin = float(smooth_width)
    width = img.shape[1]
    keep = [
        j
        for j in range(n_lines)
        if left[:, j].mean() > margin and right[:, j].mean() < width - 1 - margin
    ]
    if not keep:
        raise PreconditionError("no interior line found")
    left, right = left[:, keep], right[:, keep]

    widths = right - left
    centers = (right + left) / 2.0
    cd = widths.mean(axis=0)
    cd_mean = float(cd.mean())

    if len(keep) >= 2:
        pitch = float(np.diff(centers.mean(axis=0)).mean())
    else:
        pitch = None

    edge_sigmas = np.concatenate([left.std(axis=0, ddof=0), right.std(axis=0, ddof=0)])
    ler_sigma = float(edge_sigmas.mean())
    lwr_sigma = float(widths.std(axis=0, ddof=0).mean())

    return MetrologyReport(
        cd_mean=cd_mean,
        cd=[float(c) for c in cd],
        pitch=pitch,
        ler_sigma=ler_sigma,
        lwr_sigma=lwr_sigma,
        n_lines=len(keep),
    )


def compare(
    a: MetrologyReport,
    b: MetrologyReport,
    tolerances: dict[str, float] | None = None,
) -> DeltaReport:
    """Per-field deltas of a relative to b with pass/fail at relative tolerances."""
    tolerances = tolerances or {"cd_mean": 0.05, "pitch": 0.05, "ler_sigma": 0.15, "lwr_sigma": 0.25}
    fields: dict[str, FieldDelta] = {}
    ok = True
    for name in ("cd_mean", "pitch", "ler_sigma", "lwr_sigma"):
        va, vb = getattr(a, name), getattr(b, name)
        if va is None or vb is None:
            fields[name] = FieldDelta(absolute=None, relative=None, ok=True)
            continue
        absolute = va - vb
        # min-denominator keeps the report antisymmetric under argument swap
        denom = min(abs(va), abs(vb))
        relative = absolute / denom if denom > 0 else absolute
        tol = tolerances.get(name)
        field_ok = tol is None or abs(relative) <= tol
        fields[name] = FieldDelta(absolute=absolute, relative=relative, ok=field_ok)
        ok = ok and field_ok
    return DeltaReport(fields=fields, ok=ok)
