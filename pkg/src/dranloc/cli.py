"""Command-line front end: ``synth``, ``localize``, ``evaluate`` and ``report``."""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields, replace

from .align import AlignConfig
from .errors import ConfigError, DranlocError
from .evaluation import (MODES, PipelineConfig, QueryOutcome, Thresholds, keyframe_database,
                         read_results_csv, recall, run_pipeline, summary_table, write_results_csv)
from .geometry import pose_from_string, pose_to_string
from .rerank import RansacConfig, RerankConfig
from .scene_map import DEFAULT_OBS_TOL, load_map
from .store import FeatureStore, keyframe_name, query_name

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class CliError(Exception):
    """Reported on stderr with exit code 1."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        if path.endswith(".toml"):
            doc = tomllib.loads(raw.decode("utf-8"))
        else:
            doc = json.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError(f"config {path} must hold a table/object at top level")
    return doc


def _build(cls, doc, section):
    if not isinstance(doc, dict):
        raise ConfigError(f"[{section}] must be a table")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {unknown}")
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in doc.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def pipeline_config(doc, top_k=None, seed=None):
    """``PipelineConfig`` from a config document plus flag overrides."""
    unknown = sorted(set(doc) - {"pipeline", "rerank", "align", "synth"})
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    rr = dict(doc.get("rerank", {}))
    ransac = _build(RansacConfig, rr.pop("ransac", {}), "rerank.ransac")
    if seed is not None:
        ransac = replace(ransac, rng_seed=int(seed))
    rerank = replace(_build(RerankConfig, rr, "rerank"), ransac=ransac)
    align = _build(AlignConfig, dict(doc.get("align", {})), "align")
    pl = dict(doc.get("pipeline", {}))
    if top_k is not None:
        pl["top_k"] = top_k
    unknown = sorted(set(pl) - {"top_k"})
    if unknown:
        raise ConfigError(f"unknown keys in [pipeline]: {unknown}")
    try:
        return PipelineConfig(top_k=int(pl.get("top_k", 3)), rerank=rerank, align=align)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg):
    d = asdict(cfg)

    def clean(v):
        if isinstance(v, dict):
            return {str(k): clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v
    return clean(d)


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _parse_thresholds(items):
    if not items:
        return Thresholds()
    levels = []
    for item in items:
        for part in item.replace(";", " ").split():
            try:
                t, r = part.split(":") if ":" in part else part.split(",")
                levels.append((float(t), float(r)))
            except ValueError:
                raise CliError(f"bad threshold {part!r}; expected TRANS:ROT") from None
    try:
        return Thresholds(tuple(levels))
    except ValueError as exc:
        raise CliError(str(exc)) from exc


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args):
    from .synth import SynthConfig, generate_scene

    doc = load_config_file(args.config)
    doc = doc.get("synth", doc)
    if args.seed is not None:
        doc = dict(doc, seed=args.seed)
    cfg = SynthConfig.from_dict(doc)
    bench = generate_scene(cfg)
    bench.save(args.out)
    _write_text(os.path.join(args.out, "synth_config.json"), json.dumps(cfg.to_dict(), indent=1) + "\n")
    m = bench.map
    obs = sum(len(kf.obs_ids) for kf in m.keyframes)
    print(f"wrote {args.out}: {len(m.keyframes)} keyframes, {len(bench.query_ids)} queries, "
          f"{len(m.points)} points, {obs} observations")
    print("eps_render: " + ", ".join(f"stride {s}: {v:.4g}" for s, v in sorted(bench.eps_render.items())))
    return 0


# ---------------------------------------------------------------------------
# localize
# ---------------------------------------------------------------------------

def _resolve_inputs(args):
    bench = args.bench
    paths = {
        "map": args.map or (bench and os.path.join(bench, "map.json")),
        "features": args.features or (bench and os.path.join(bench, "features")),
        "queries": args.queries or (bench and os.path.join(bench, "queries.json")),
        "oracle": args.oracle or (bench and os.path.join(bench, "oracle.json")),
    }
    for key in ("map", "features", "queries"):
        if not paths[key]:
            raise CliError(f"no {key} given; pass --bench or --{key}")
        if not os.path.exists(paths[key]):
            raise CliError(f"missing {key}: {paths[key]}")
    if paths["oracle"] and not os.path.exists(paths["oracle"]):
        if args.oracle:
            raise CliError(f"missing oracle: {paths['oracle']}")
        paths["oracle"] = None
    return paths


def _read_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {what} {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise CliError(f"cannot parse {what} {path}: {exc}") from exc


def _load_queries(path):
    doc = _read_json(path, "queries")
    try:
        return [(int(q["id"]), int(q.get("camera_id", 0))) for q in doc["queries"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed queries file {path}: {exc!r}") from exc


def _load_gt(path):
    if path is None:
        return {}
    doc = _read_json(path, "oracle")
    try:
        return {int(q): pose_from_string(s) for q, s in doc["gt_query_poses"].items()}
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CliError(f"malformed oracle {path}: {exc!r}") from exc


def _check_feature_files(root, scene_map, queries, mode):
    suffixes = [".gdsc"]
    if mode in ("RA", "RPA"):
        suffixes.append(".fpyr")
    if mode in ("RP", "RPA"):
        suffixes.append(".hyp.fpyr")
    names = [keyframe_name(kf.id) for kf in scene_map.keyframes] + [query_name(q) for q, _ in queries]
    for name in names:
        for suf in suffixes:
            path = os.path.join(root, name + suf)
            if not os.path.exists(path):
                raise CliError(f"missing feature file: {path}")


def _pose_line(o):
    return f"{o.query_id} " + (pose_to_string(o.est_pose) if o.est_pose is not None else "none")


def _diag_record(o):
    d = o.diagnostics
    rec = {"query_id": o.query_id, "mode": o.mode.lower(), "failure": o.failure,
           "retrieval": d.get("retrieval", []), "rerank": d.get("rerank", []),
           "inliers": int(d.get("inliers", 0)), "converged": bool(d.get("converged", False))}
    if "levels" in d:
        rec["levels"] = [[int(s), int(i), float(c)] for s, i, c in d["levels"]]
    return rec


def cmd_localize(args):
    mode = args.mode.upper()
    doc = load_config_file(args.config)
    cfg = pipeline_config(doc, top_k=args.top_k, seed=args.seed)
    threads = int(args.threads)
    if threads < 1:
        raise CliError("--threads must be >= 1")
    paths = _resolve_inputs(args)
    try:
        scene_map = load_map(paths["map"], obs_tol=args.obs_tol)
    except OSError as exc:
        raise CliError(f"cannot read map {paths['map']}: {exc.strerror}") from exc
    queries = _load_queries(paths["queries"])
    gt = _load_gt(paths["oracle"])
    _check_feature_files(paths["features"], scene_map, queries, mode)
    for _, cam in queries:
        if cam not in scene_map.cameras:
            raise CliError(f"query camera {cam} is not in the map")
    store = FeatureStore(paths["features"])
    db = keyframe_database(scene_map, store)

    def work(item):
        qid, cam = item
        return run_pipeline(qid, scene_map, store, mode, cfg, camera=scene_map.cameras[cam],
                            gt_pose=gt.get(qid), database=db)

    items = sorted(queries)
    if threads == 1:
        outcomes = [work(it) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, items))

    os.makedirs(args.out, exist_ok=True)
    tag = mode.lower()
    write_results_csv(outcomes, os.path.join(args.out, f"results_{tag}.csv"))
    _write_text(os.path.join(args.out, f"poses_{tag}.txt"), "".join(_pose_line(o) + "\n" for o in outcomes))
    _write_text(os.path.join(args.out, f"diagnostics_{tag}.json"),
                json.dumps([_diag_record(o) for o in outcomes], indent=1) + "\n")
    effective = {"mode": tag, "inputs": paths, "obs_tol": args.obs_tol, "pipeline": config_to_dict(cfg)}
    _write_text(os.path.join(args.out, "effective_config.json"), json.dumps(effective, indent=1) + "\n")
    failed = sum(o.est_pose is None for o in outcomes)
    print(f"{tag}: {len(outcomes)} queries, {len(outcomes) - failed} with a pose, {failed} failed")
    if gt:
        print(f"{tag}: recall {recall(outcomes).summary()}")
    return 0


# ---------------------------------------------------------------------------
# evaluate / report
# ---------------------------------------------------------------------------

def _read_results(path):
    if not os.path.exists(path):
        raise CliError(f"missing results file: {path}")
    try:
        return read_results_csv(path)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def cmd_evaluate(args):
    thresholds = _parse_thresholds(args.thresholds)
    outcomes = _read_results(args.results)
    warnings = []
    if args.oracle:
        if not os.path.exists(args.oracle):
            raise CliError(f"missing oracle: {args.oracle}")
        expected = set(_load_gt(args.oracle))
        for mode in sorted({o.mode for o in outcomes}):
            have = {o.query_id for o in outcomes if o.mode == mode}
            extra = sorted(have - expected)
            if extra:
                raise CliError(f"results contain queries absent from the oracle: {extra[:10]}")
            missing = sorted(expected - have)
            if missing:
                warnings.append(f"{mode}: {len(missing)} oracle queries missing from results, counted as failures")
                outcomes += [QueryOutcome(q, mode) for q in missing]
    table = summary_table(outcomes, thresholds)
    labels = thresholds.labels()
    print("thresholds (units, deg): " + " / ".join(labels))
    for mode in sorted(table, key=MODES.index):
        print(f"{mode}: {table[mode]['summary']}")
    for w in warnings:
        print(f"warning: {w}")
    out = args.out or os.path.splitext(args.results)[0] + ".summary.json"
    doc = {"thresholds": [list(t) for t in thresholds], "modes": table, "warnings": warnings}
    _write_text(out, json.dumps(doc, indent=1) + "\n")
    return 0


def cmd_report(args):
    thresholds = _parse_thresholds(args.thresholds)
    rows, query_sets = [], {}
    for path in args.results:
        outcomes = _read_results(path)
        for mode, row in summary_table(outcomes, thresholds).items():
            rows.append((os.path.basename(path), mode, row))
            query_sets[(os.path.basename(path), mode)] = {o.query_id for o in outcomes if o.mode == mode}
    rows.sort(key=lambda r: (MODES.index(r[1]), r[0]))
    head = "| mode | file | recall " + " / ".join(thresholds.labels()) + " | queries | mean inliers | converged |"
    lines = [head, "|---|---|---|---|---|---|"]
    for name, mode, row in rows:
        lines.append(f"| {mode} | {name} | {row['summary']} | {row['queries']} | "
                     f"{row['mean_inliers']:.1f} | {100.0 * row['convergence_rate']:.1f}% |")
    warnings = []
    sets = list(query_sets.items())
    for key, s in sets[1:]:
        if s != sets[0][1]:
            warnings.append(f"query set of {key[0]} ({key[1]}) differs from {sets[0][0][0]} ({sets[0][0][1]}): "
                            f"{len(s ^ sets[0][1])} queries not shared")
    lines.append("")
    lines.append("Per-stage diagnostics: mean inliers counts PnP inliers of the selected keyframe "
                 "(0 without re-ranking); converged is the share of queries whose finest "
                 "alignment level met the step and residual tests.")
    for w in warnings:
        lines.append(f"warning: {w}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        _write_text(args.out, text)
    if args.csv:
        csv_lines = ["mode,file," + ",".join(f"recall_{i}" for i in range(len(thresholds)))
                     + ",queries,mean_inliers,convergence_rate"]
        for name, mode, row in rows:
            csv_lines.append(",".join([mode, name, *(repr(p) for p in row["recall"]), str(row["queries"]),
                                       repr(row["mean_inliers"]), repr(row["convergence_rate"])]))
        _write_text(args.csv, "\n".join(csv_lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="dranloc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic benchmark")
    s.add_argument("--config", help="JSON or TOML file (flat, or with a [synth] table)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("localize", help="localize every query of a benchmark")
    s.add_argument("--bench", help="benchmark directory (map.json, features/, queries.json, oracle.json)")
    s.add_argument("--map")
    s.add_argument("--features")
    s.add_argument("--queries")
    s.add_argument("--oracle")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--mode", choices=["ra", "rp", "rpa"], default="rpa")
    s.add_argument("--top-k", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--config", help="JSON or TOML file with [pipeline], [rerank], [rerank.ransac], [align]")
    s.add_argument("--obs-tol", type=float, default=DEFAULT_OBS_TOL, help="map integrity tolerance in pixels")
    s.set_defaults(func=cmd_localize)

    s = sub.add_parser("evaluate", help="recall summary of one results CSV")
    s.add_argument("results")
    s.add_argument("--oracle")
    s.add_argument("--thresholds", nargs="+", help="TRANS:ROT pairs, e.g. 0.25:2 0.5:5 5:10")
    s.add_argument("--out", help="summary JSON path (default: next to the CSV)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="ablation table over several results files")
    s.add_argument("results", nargs="+")
    s.add_argument("--thresholds", nargs="+")
    s.add_argument("--out", help="also write the markdown table here")
    s.add_argument("--csv", help="also write a CSV for plotting")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DranlocError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
