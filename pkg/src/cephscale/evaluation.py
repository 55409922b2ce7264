"""Length-error metrics and success detection rates over a test set."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

PRECISIONS = (0.25, 0.5, 1.0)

# Scores reported for the method and the four-scale regression baseline on a
# 163-image clinical set; printed for context only.
REFERENCE_RESULTS = {
    "Ours": {"mpe": 1.74, "mre": 0.172, "sdr": {0.25: 75.31, 0.5: 96.91, 1.0: 100.0}},
    "4-rtp": {"mpe": 4.5, "mre": 0.458, "sdr": {0.25: 47.31, 0.5: 75.27, 1.0: 92.47}},
}


def pixel_error(lp: float, lm: float) -> float:
    return abs(float(lp) - float(lm))


def real_error(ep: float, lm: float, calibration_mm: float = 45.0) -> float:
    if lm <= 0:
        raise ValueError("annotated length must be positive")
    return float(ep) * calibration_mm / float(lm)


def sdr(errors_mm, p: float) -> float:
    """Percentage of errors strictly below ``p``."""
    e = np.asarray(list(errors_mm), dtype=np.float64)
    if e.size == 0:
        raise ValueError("no errors to score")
    return 100.0 * np.count_nonzero(e < p) / e.size


@dataclass
class ImageScore:
    image_id: str
    lp: float | None
    lm: float
    ep: float
    er: float


@dataclass
class EvalReport:
    mpe: float
    mre: float
    sdr: dict
    n: int
    n_failed: int
    scores: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"mpe": _finite(self.mpe), "mre": _finite(self.mre), "n": self.n,
                "n_failed": self.n_failed,
                "sdr": {repr(float(p)): v for p, v in sorted(self.sdr.items())},
                "images": [{"id": s.image_id, "lp": s.lp, "lm": s.lm,
                            "ep": _finite(s.ep), "er": _finite(s.er)} for s in self.scores]}


def _finite(v):
    return v if math.isfinite(v) else None


def annotated_length(row) -> float:
    """Straight-line distance between the annotated outermost major marks."""
    if isinstance(row, (int, float)):
        return float(row)
    return float(math.hypot(row["loc1_x"] - row["loc10_x"], row["loc1_y"] - row["loc10_y"]))


def evaluate(predictions: dict, annotations: dict, calibration_mm: float = 45.0,
             precisions=PRECISIONS) -> EvalReport:
    """Score predicted calibration lengths against annotations.

    ``predictions`` maps image id to a pixel length, or ``None`` for a failed
    detection (scored as infinite error). ``annotations`` maps id to an
    annotation row or directly to the annotated length.
    """
    missing = sorted(set(annotations) - set(predictions))
    extra = sorted(set(predictions) - set(annotations))
    if missing or extra:
        raise ValueError(f"unmatched ids: no result for {missing[:5]}, no annotation for {extra[:5]}")
    if not annotations:
        raise ValueError("nothing to evaluate")
    scores = []
    for image_id in sorted(annotations):
        lm = annotated_length(annotations[image_id])
        lp = predictions[image_id]
        if lp is None or not math.isfinite(lp):
            scores.append(ImageScore(image_id, None, lm, math.inf, math.inf))
            continue
        ep = pixel_error(lp, lm)
        scores.append(ImageScore(image_id, float(lp), lm, ep, real_error(ep, lm, calibration_mm)))
    ers = [s.er for s in scores]
    return EvalReport(mpe=float(np.mean([s.ep for s in scores])), mre=float(np.mean(ers)),
                      sdr={p: sdr(ers, p) for p in precisions}, n=len(scores),
                      n_failed=sum(s.lp is None for s in scores), scores=scores)


def lengths_from_results(results, key: str = "calibration_px") -> dict:
    """``{id: length or None}`` from ``(id, result)`` pairs or JSON-lines records."""
    out = {}
    for item in results:
        if isinstance(item, dict):
            image_id, value = item["id"], (item.get(key) if item.get("success") else None)
        else:
            image_id, res = item
            value = getattr(res, key, None)
        if image_id in out:
            raise ValueError(f"duplicate result id {image_id!r}")
        out[image_id] = None if value is None else float(value)
    return out


def format_table(reports: dict, reference: dict | None = REFERENCE_RESULTS,
                 precisions=PRECISIONS) -> str:
    """Plain-text table, one row per method; reference rows are tagged ``(ref)``."""
    head = ["Method", "MPE (px)", "MRE (mm)"] + [f"SDR {p:g} mm" for p in precisions]
    rows = []
    for name, rep in reports.items():
        rows.append([name, f"{rep.mpe:.3f}", f"{rep.mre:.3f}"]
                    + [f"{rep.sdr[p]:.2f}%" for p in precisions])
    for name, ref in (reference or {}).items():
        rows.append([f"{name} (ref)", f"{ref['mpe']:.2f}", f"{ref['mre']:.3f}"]
                    + [f"{ref['sdr'][p]:.2f}%" for p in precisions])
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    line = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    sep = "-" * len(line(head))
    return "\n".join([line(head), sep] + [line(r) for r in rows])


def report_json(reports: dict) -> str:
    return json.dumps({name: rep.to_dict() for name, rep in reports.items()},
                      sort_keys=True, indent=1)
