"""Flow accuracy metrics and the evaluation resize protocol."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from bidiflow.grid import resize_flow

FL_ABS_THRESHOLD = 3.0
FL_REL_THRESHOLD = 0.05
EVAL_MULTIPLE = 64

REPORT_FIELDS = ("aee_all", "aee_noc", "fl_all", "fl_noc", "n_valid")


@dataclass(frozen=True)
class EvalReport:
    aee_all: float
    aee_noc: float
    fl_all: float
    fl_noc: float
    n_valid: int

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=False)

    def to_csv(self, header=True):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        if header:
            writer.writerow(REPORT_FIELDS)
        writer.writerow([repr(getattr(self, k)) for k in REPORT_FIELDS])
        return buf.getvalue()

    def table(self):
        rows = [("AEE (all)", f"{self.aee_all:.4f}"), ("AEE (noc)", f"{self.aee_noc:.4f}"),
                ("Fl-all", f"{100 * self.fl_all:.2f}%"), ("Fl-noc", f"{100 * self.fl_noc:.2f}%"),
                ("valid px", str(self.n_valid))]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>10}" for k, v in rows)


def _binary(mask, shape, what):
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(mask)
    if m.shape != shape:
        raise ValueError(f"{what} mask shape {m.shape} does not match flow shape {shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError(f"{what} mask must be binary")
    return m.astype(bool)


def endpoint_error(est, gt, valid=None):
    """Per-pixel Euclidean distance between two flows, zero where invalid."""
    if est.shape != gt.shape:
        raise ValueError(f"flow shapes differ: {est.shape} vs {gt.shape}")
    valid = _binary(valid, gt.shape, "valid")
    err = np.hypot(est.u - gt.u, est.v - gt.v)
    return np.where(valid, err, 0.0)


def _outliers(err, gt_mag):
    # both arms must hold; a zero-length gt makes the relative arm trivially true
    return (err >= FL_ABS_THRESHOLD) & (err >= FL_REL_THRESHOLD * gt_mag)


def evaluate(est, gt, valid=None, noc_mask=None):
    """AEE and Fl-all over valid pixels, plus the same restricted to ``noc_mask``.

    A pixel is an outlier when its endpoint error is at least 3 px and at
    least 5% of the ground-truth magnitude.
    """
    valid = _binary(valid, gt.shape, "valid")
    noc = valid & _binary(noc_mask, gt.shape, "noc")
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("no valid pixels to evaluate")
    err = endpoint_error(est, gt, valid)
    bad = _outliers(err, gt.magnitude())
    aee_all = float(err[valid].mean())
    fl_all = float(bad[valid].mean())
    if noc.any():
        aee_noc = float(err[noc].mean())
        fl_noc = float(bad[noc].mean())
    else:
        aee_noc = fl_noc = float("nan")
    return EvalReport(aee_all, aee_noc, fl_all, fl_noc, n_valid)


def reports_to_csv(reports, labels=None):
    """CSV text for several reports; ``labels`` adds a leading ``name`` column."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    head = list(REPORT_FIELDS)
    writer.writerow((["name"] + head) if labels is not None else head)
    for i, rep in enumerate(reports):
        row = [repr(getattr(rep, k)) for k in REPORT_FIELDS]
        writer.writerow(([labels[i]] + row) if labels is not None else row)
    return buf.getvalue()


def reports_to_jsonl(reports):
    return "".join(r.to_json() + "\n" for r in reports)


def eval_resize_protocol(img_w, img_h, multiple=EVAL_MULTIPLE):
    """Smallest size >= (img_w, img_h) divisible by ``multiple``, with flow scales.

    Flow estimated at the returned size maps back to the original grid by
    multiplying u by ``u_scale`` and v by ``v_scale``.
    """
    if img_w <= 0 or img_h <= 0:
        raise ValueError(f"image size must be positive, got {img_w}x{img_h}")
    eval_w = int(math.ceil(img_w / multiple) * multiple)
    eval_h = int(math.ceil(img_h / multiple) * multiple)
    return eval_w, eval_h, img_w / eval_w, img_h / eval_h


def needs_resize(img_w, img_h, multiple=EVAL_MULTIPLE):
    return img_w % multiple != 0 or img_h % multiple != 0


def rescale_to_original(flow, img_w, img_h):
    """Resample a flow estimated at the protocol size back to ``img_w`` x ``img_h``."""
    if flow.shape == (img_h, img_w):
        return flow
    return resize_flow(flow, img_w, img_h)

