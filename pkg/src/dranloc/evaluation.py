"""Pose-accuracy metrics, recall tables and the retrieval/re-ranking/alignment driver."""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .align import AlignConfig, ReferenceView, optimize_pyramid
from .errors import DranlocError, EmptyInput, NoValidPoints
from .geometry import pose_error, project_points, transform_points
from .rerank import RerankConfig, rerank_candidates
from .retrieval import rank_keyframes, top_k
from .scene_map import keyframe_arrays
from .store import keyframe_name, query_name

MODES = ("RA", "RP", "RPA")
DEFAULT_THRESHOLDS = ((0.25, 2.0), (0.5, 5.0), (5.0, 10.0))
CSV_COLUMNS = ("query_id", "mode", "localized_25", "localized_50", "localized_500",
               "trans_err", "rot_err", "inliers", "converged")


@dataclass(frozen=True)
class Thresholds:
    levels: tuple = DEFAULT_THRESHOLDS

    def __post_init__(self):
        levels = tuple((float(t), float(r)) for t, r in self.levels)
        if not levels:
            raise ValueError("at least one threshold is required")
        for (t0, r0), (t1, r1) in zip(levels, levels[1:]):
            if not (t1 > t0 and r1 > r0):
                raise ValueError("thresholds must increase strictly in both components")
        object.__setattr__(self, "levels", levels)

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)

    def labels(self):
        return [f"({t:g}, {r:g})" for t, r in self.levels]


@dataclass
class QueryOutcome:
    query_id: int
    mode: str
    gt_pose: object = None
    est_pose: object = None
    trans_err: float = None
    rot_err: float = None
    failure: str = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.est_pose is not None and self.gt_pose is not None and self.trans_err is None:
            self.trans_err, self.rot_err = pose_error(self.est_pose, self.gt_pose)

    @property
    def localized(self):
        return self.trans_err is not None

    def within(self, trans, rot):
        return self.localized and self.trans_err <= trans and self.rot_err <= rot


@dataclass
class RecallReport:
    thresholds: Thresholds
    percentages: list
    counts: list
    total: int
    per_mode: dict = field(default_factory=dict)

    def summary(self):
        return format_recall(self.percentages)


def format_recall(percentages):
    return " / ".join(f"{p:.1f}" for p in percentages)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def huber(e, gamma):
    e = np.asarray(e, dtype=float)
    return np.where(e <= gamma, 0.5 * e * e, gamma * (e - 0.5 * gamma))


def reprojection_loss(est, gt, points, camera, gamma_px=1.0, return_dropped=False):
    """Mean Huber cost of pixel displacement between projections under ``est`` and ``gt``."""
    P = np.asarray([getattr(p, "position", p) for p in points], dtype=float).reshape(-1, 3)
    uv_e, ok_e = project_points(camera, transform_points(est, P))
    uv_g, ok_g = project_points(camera, transform_points(gt, P))
    ok = ok_e & ok_g
    if not ok.any():
        raise NoValidPoints("no point is in front of both cameras")
    e = np.linalg.norm(uv_e[ok] - uv_g[ok], axis=1)
    loss = float(np.mean(huber(e, gamma_px)))
    return (loss, int((~ok).sum())) if return_dropped else loss


def _recall_counts(outcomes, thresholds):
    return [sum(o.within(t, r) for o in outcomes) for t, r in thresholds]


def recall(outcomes, thresholds=Thresholds()):
    """Percentage of queries within each (translation AND rotation) threshold."""
    outcomes = list(outcomes)
    if not outcomes:
        raise EmptyInput("recall needs at least one outcome")
    thresholds = thresholds if isinstance(thresholds, Thresholds) else Thresholds(tuple(thresholds))
    counts = _recall_counts(outcomes, thresholds)
    n = len(outcomes)
    per_mode = {}
    for mode in sorted({o.mode for o in outcomes}):
        sub = [o for o in outcomes if o.mode == mode]
        per_mode[mode] = [100.0 * c / len(sub) for c in _recall_counts(sub, thresholds)]
    return RecallReport(thresholds, [100.0 * c / n for c in counts], counts, n, per_mode)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    top_k: int = 3
    rerank: RerankConfig = field(default_factory=RerankConfig)
    align: AlignConfig = field(default_factory=AlignConfig)

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


def _reference(scene_map, store, kf_id):
    kf = scene_map.keyframe(kf_id)
    _, xyz, pix = keyframe_arrays(scene_map, kf_id)
    return ReferenceView(kf.pose, scene_map.camera(kf.camera_id), store.pyramid(keyframe_name(kf_id)), xyz, pix)


def _align(init, kf_order, scene_map, store, query_pyr, camera, config, diag):
    ac = config.align
    ids = kf_order[:1] if ac.point_source == "top_keyframe_obs" else kf_order[:config.top_k]
    refs = [_reference(scene_map, store, k) for k in ids]
    res = optimize_pyramid(init, refs, query_pyr, camera, ac)
    diag["converged"] = res.converged
    diag["align_keyframes"] = list(ids)
    diag["levels"] = [(s.stride, s.iterations, s.final_cost) for s in res.levels]
    return res.pose


def keyframe_database(scene_map, store):
    if scene_map.global_descriptors:
        return dict(scene_map.global_descriptors)
    return {kf.id: store.descriptor(keyframe_name(kf.id)) for kf in scene_map.keyframes}


def run_pipeline(query_id, scene_map, store, mode, config=PipelineConfig(), camera=None, gt_pose=None,
                 database=None):
    """Localize one query. Stage failures come back as an outcome without a pose."""
    mode = mode.upper()
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    camera = camera if camera is not None else next(iter(scene_map.cameras.values()))
    diag = {"retrieval": [], "rerank": [], "inliers": 0, "converged": False}
    out = QueryOutcome(int(query_id), mode, gt_pose=gt_pose, diagnostics=diag)
    name = query_name(query_id)
    stage = "retrieval"
    try:
        db = database if database is not None else keyframe_database(scene_map, store)
        cands = [k for k, _ in top_k(rank_keyframes(store.descriptor(name), db), config.top_k)]
        diag["retrieval"] = cands
        if mode == "RA":
            stage = "alignment"
            est = _align(scene_map.keyframe(cands[0]).pose, cands, scene_map, store, store.pyramid(name),
                         camera, config, diag)
        else:
            stage = "rerank"
            hyp_q = store.hypercolumn(name)
            rr = rerank_candidates(hyp_q, [(k, store.hypercolumn(keyframe_name(k))) for k in cands],
                                   scene_map, camera, config.rerank)
            diag["rerank"] = rr.order
            diag["rerank_details"] = rr.diagnostics
            if not rr.ranking:
                raise NoValidPoints("no candidate keyframe produced a PnP model")
            best_kf, pnp = rr.ranking[0]
            diag["inliers"] = pnp.num_inliers
            diag["pnp_keyframe"] = best_kf
            est = pnp.pose
            if mode == "RPA":
                stage = "alignment"
                est = _align(est, rr.order, scene_map, store, store.pyramid(name), camera, config, diag)
    except (DranlocError, FileNotFoundError, KeyError, np.linalg.LinAlgError) as exc:
        out.failure = f"{stage}: {type(exc).__name__}: {exc}"
        return out
    out.est_pose = est
    if gt_pose is not None:
        out.trans_err, out.rot_err = pose_error(est, gt_pose)
    return out


# ---------------------------------------------------------------------------
# results files
# ---------------------------------------------------------------------------

def _fmt(v):
    return "" if v is None else repr(float(v))


def outcome_row(o, thresholds=Thresholds()):
    flags = [int(o.within(t, r)) for t, r in thresholds][:3]
    flags += [0] * (3 - len(flags))
    return [str(o.query_id), o.mode.lower(), *map(str, flags), _fmt(o.trans_err), _fmt(o.rot_err),
            str(int(o.diagnostics.get("inliers", 0))), str(int(bool(o.diagnostics.get("converged", False))))]


def results_to_csv(outcomes, thresholds=Thresholds()):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for o in sorted(outcomes, key=lambda o: (o.query_id, o.mode)):
        w.writerow(outcome_row(o, thresholds))
    return buf.getvalue()


def write_results_csv(outcomes, path, thresholds=Thresholds()):
    with open(path, "w", newline="") as fh:
        fh.write(results_to_csv(outcomes, thresholds))


def _opt_float(text, name, line):
    if text == "":
        return None
    try:
        v = float(text)
    except ValueError:
        raise ValueError(f"line {line}: {name} is not a number: {text!r}") from None
    if math.isnan(v):
        return None
    return v


def read_results_csv(path):
    """Outcomes from a results CSV. Raises ``ValueError`` on schema problems."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyInput(f"{path}: empty results file")
    if tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: header {rows[0]} does not match {list(CSV_COLUMNS)}")
    out = []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise ValueError(f"{path}: line {n}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        rec = dict(zip(CSV_COLUMNS, row))
        try:
            qid = int(rec["query_id"])
            inliers = int(rec["inliers"])
            converged = bool(int(rec["converged"]))
        except ValueError:
            raise ValueError(f"{path}: line {n}: malformed integer field") from None
        mode = rec["mode"].upper()
        if mode not in MODES:
            raise ValueError(f"{path}: line {n}: unknown mode {rec['mode']!r}")
        te = _opt_float(rec["trans_err"], "trans_err", n)
        re_ = _opt_float(rec["rot_err"], "rot_err", n)
        if (te is None) != (re_ is None):
            raise ValueError(f"{path}: line {n}: trans_err and rot_err must both be set or both empty")
        out.append(QueryOutcome(qid, mode, trans_err=te, rot_err=re_,
                                diagnostics={"inliers": inliers, "converged": converged}))
    if not out:
        raise EmptyInput(f"{path}: no result rows")
    return out


def summary_table(outcomes, thresholds=Thresholds()):
    """Per-mode recall rows ``{mode: {"recall": [...], "summary": "a / b / c", ...}}``."""
    rep = recall(outcomes, thresholds)
    table = {}
    for mode, pct in rep.per_mode.items():
        sub = [o for o in outcomes if o.mode == mode]
        table[mode] = {
            "recall": pct,
            "summary": format_recall(pct),
            "queries": len(sub),
            "localized": sum(o.localized for o in sub),
            "mean_inliers": float(np.mean([o.diagnostics.get("inliers", 0) for o in sub])),
            "convergence_rate": float(np.mean([bool(o.diagnostics.get("converged", False)) for o in sub])),
        }
    return table
