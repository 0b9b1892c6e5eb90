"""Stage graph, content-addressed caching and provenance.

Each stage writes into ``<experiment>/<stage>/``. Its cache key hashes the
stage name, the code version, the config subset the stage reads and the
output checksums of its upstream stages; a stage is skipped when its
recorded key matches and its files still hash to the recorded checksum.
``provenance.json`` lists (stage, key, inputs, seed, outputs) and is
deterministic; wall-clock timings are logged and optionally written to a
separate file.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
import time
from collections import Counter
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import Experiment, load_config
from .core import store_read, store_write
from .datagen import gen_fleet, write_raw_traces
from .deepnet import predict_logits, save_checkpoint, train, tune_net
from .deepnet.train import apply_choice
from .errors import DataError, StoreError
from .evaluate import fold_report, roc_auc, timeline_export
from .features import FeatureMatrix, PValueTable, extract_matrix, select_features
from .forest import fit_forest, predict_proba, search_grid
from .ingest import correct_fleet, ingest_raw_dir, merge_segments
from .instancer import build_examples, stack_examples
from .splits import SplitAssignment, grouped_stratified_kfold, grouped_stratified_split
from .tables import (
    TRUTH_FILENAME,
    read_accidents,
    read_labels,
    read_matrix,
    write_accidents,
    write_labels,
    write_matrix,
    write_truth,
)

log = logging.getLogger(__name__)

STAGE_RECORD = "_stage.json"
ORACLE_DIR = "oracle"


def _code_version() -> str:
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode() + b"\0" + p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


CODE_VERSION = _code_version()


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def stage_checksum(path: Path) -> str:
    """sha256 over a stage directory, skipping its record and the oracle folder."""
    h = hashlib.sha256()
    for p in sorted(q for q in path.rglob("*") if q.is_file()):
        rel = p.relative_to(path)
        if rel.as_posix() == STAGE_RECORD or rel.parts[0] == ORACLE_DIR:
            continue
        h.update(rel.as_posix().encode("utf-8") + b"\0")
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


# stages; each takes the experiment config, a dict of upstream dirs and its output dir


def run_generate(cfg: Experiment, up: dict, out: Path) -> dict:
    data = cfg.section("data")
    if data["source"] == "raw":
        write_accidents(read_accidents(data["accidents"]), out / "accidents.csv")
        return {"source": "raw"}
    fleet = gen_fleet(data["n_drivers"], cfg.mode, cfg.seed, cfg.fleet, n_jobs=cfg.section("runtime", "n_jobs"))
    write_accidents(fleet.accidents, out / "accidents.csv")
    (out / ORACLE_DIR).mkdir(exist_ok=True)
    write_truth(fleet.truth, out / ORACLE_DIR / TRUTH_FILENAME)
    dump_json({t: {"perm": list(p), "signs": list(s)} for t, (p, s) in sorted(fleet.misconfig.items())},
              out / ORACLE_DIR / "misconfig.json")
    if data["raw_export"]:
        write_raw_traces(fleet.segments, out / "raw", seed=cfg.seed)
    else:
        store_write(fleet.segments, out / "segments", meta={"stage": "generate"})
    return {"segments": len(fleet.segments), "accidents": len(fleet.accidents)}


def run_ingest(cfg: Experiment, up: dict, out: Path) -> dict:
    report = Counter()
    gap = cfg.study.gap_tolerance_s
    gen = up["generate"]
    data = cfg.section("data")
    if data["source"] == "raw":
        raw = Path(data["raw_dir"])
        segments = ingest_raw_dir(raw, raw / "assignment.csv", gap, report)
        transforms = {}
    elif (gen / "raw").exists():
        segments = ingest_raw_dir(gen / "raw", gen / "raw" / "assignment.csv", gap, report)
        transforms = {}
    else:
        segments = merge_segments(store_read(gen / "segments"), gap)
        segments, transforms = correct_fleet(segments, report)
    store_write(segments, out / "segments", meta={"stage": "ingest"})
    dump_json(
        {f"{t}/{m}": {"perm": list(c.perm), "signs": list(c.signs), "uncorrectable": c.uncorrectable}
         for (t, m), c in sorted(transforms.items())},
        out / "axes.json",
    )
    dump_json(dict(sorted(report.items())), out / "report.json")
    return dict(report)


def run_instances(cfg: Experiment, up: dict, out: Path) -> dict:
    report = Counter()
    segments = store_read(up["ingest"] / "segments")
    accidents = read_accidents(up["generate"] / "accidents.csv")
    examples = build_examples(segments, accidents, cfg.study, report)
    if not examples:
        raise DataError("no examples could be built; check window length and study length")
    store_write(examples, out / "examples", meta={"stage": "instances"})
    write_labels([(e.example_id, e.driver_id, e.t_end, e.label) for e in examples], out / "labels.csv")
    dump_json(dict(sorted(report.items())), out / "report.json")
    return dict(report)


def make_splits(labels: list[dict], test_fraction: float, k: int, tol: float, seed: int, restarts: int = 32) -> dict:
    g = np.array([r["driver_id"] for r in labels])
    y = np.array([r["label"] for r in labels])
    test = grouped_stratified_split(g, y, test_fraction, tol, seed, restarts)
    train_mask = test.mask(g, "train")
    folds = grouped_stratified_kfold(g[train_mask], y[train_mask], k, seed, tol, restarts)
    parts = [("test part", y[~train_mask])]
    parts += [(f"fold {i} validation part", y[train_mask][f.mask(g[train_mask], "test")]) for i, f in enumerate(folds)]
    for name, yy in parts:
        if len(np.unique(yy)) < 2:
            raise DataError(f"{name} holds a single class; use more drivers or fewer folds")
    return {"test": test.to_json(), "folds": [f.to_json() for f in folds]}


def run_split(cfg: Experiment, up: dict, out: Path) -> dict:
    labels = read_labels(up["instances"] / "labels.csv")
    sp = make_splits(labels, cfg.study.test_fraction, cfg.study.folds, cfg.section("split", "tol"), cfg.seed,
                     cfg.section("split", "restarts"))
    dump_json(sp, out / "splits.json")
    return {"within_tolerance": sp["test"]["within_tolerance"]}


class SplitView:
    """Row masks for the test part and the k folds of the training part."""

    def __init__(self, splits: dict, driver_ids):
        self.g = np.asarray(driver_ids)
        self.test_split = SplitAssignment.from_json(splits["test"])
        self.folds = [SplitAssignment.from_json(f) for f in splits["folds"]]
        self.test = self.test_split.mask(self.g, "test")
        self.train = ~self.test
        self.k = len(self.folds)

    def fold_val(self, i: int) -> np.ndarray:
        """Rows (over all examples) validated in fold i."""
        return self.folds[i].mask(self.g, "test") & self.train

    def fold_train(self, i: int) -> np.ndarray:
        return self.train & ~self.fold_val(i)


def run_features(cfg: Experiment, up: dict, out: Path) -> dict:
    examples = store_read(up["instances"] / "examples")
    X, _, _ = stack_examples(examples)
    fm = extract_matrix(X, [e.example_id for e in examples], n_jobs=cfg.section("runtime", "n_jobs"))
    write_matrix(out / "features.csv", fm.ids, fm.names, fm.values)
    return {"rows": len(fm.ids), "columns": len(fm.names), "imputed": fm.n_imputed}


def load_features(path: Path) -> FeatureMatrix:
    ids, names, X = read_matrix(path)
    return FeatureMatrix(ids, names, X)


def _aligned(features_dir: Path, labels_path: Path):
    fm = load_features(features_dir / "features.csv")
    labels = read_labels(labels_path)
    by_id = {r["example_id"]: r for r in labels}
    if [r["example_id"] for r in labels] != fm.ids:
        try:
            labels = [by_id[i] for i in fm.ids]
        except KeyError as exc:
            raise DataError(f"feature row {exc} has no label") from None
    y = np.array([r["label"] for r in labels], dtype=np.int64)
    g = np.array([r["driver_id"] for r in labels])
    return fm, y, g, labels


def run_select(cfg: Experiment, up: dict, out: Path) -> dict:
    fm, y, g, _ = _aligned(up["features"], up["instances"] / "labels.csv")
    sv = SplitView(load_json(up["split"] / "splits.json"), g)
    q = cfg.section("features", "q")
    nj = cfg.section("runtime", "n_jobs")
    full = select_features(fm, y, q, np.flatnonzero(sv.train), n_jobs=nj)
    dump_json(full.to_json(), out / "mask.json")
    folds = [select_features(fm, y, q, np.flatnonzero(sv.fold_train(i)), n_jobs=nj).to_json() for i in range(sv.k)]
    dump_json(folds, out / "fold_masks.json")
    return {"selected": int(full.mask.sum()), "fold_selected": [int(sum(f["selected"] for f in t["features"])) for t in folds]}


def _columns(mask: np.ndarray, policy: str) -> np.ndarray:
    if mask.any() or policy == "none":
        return mask
    return np.ones_like(mask)


def run_train_forest(cfg: Experiment, up: dict, out: Path) -> dict:
    fm, y, g, labels = _aligned(up["features"], up["instances"] / "labels.csv")
    sv = SplitView(load_json(up["split"] / "splits.json"), g)
    policy = cfg.section("features", "empty_selection")
    fold_masks = [PValueTable.from_json(t).mask for t in load_json(up["select"] / "fold_masks.json")]
    full_mask = PValueTable.from_json(load_json(up["select"] / "mask.json")).mask
    nj = cfg.section("runtime", "n_jobs")

    # CV over the training part only; rows are re-indexed to it
    tr = np.flatnonzero(sv.train)
    Xtr, ytr = fm.values[tr], y[tr]
    folds = [sv.fold_val(i)[tr] for i in range(sv.k)]
    columns = [_columns(m, policy) for m in fold_masks]
    best, aucs, curves, history = search_grid(Xtr, ytr, folds, cfg.forest_grid, seed=cfg.seed, columns=columns, n_jobs=nj)
    cols = _columns(full_mask, policy)
    test_rows = np.flatnonzero(sv.test)
    if cols.any():
        model = fit_forest(Xtr[:, cols], ytr, best, seed=cfg.seed, n_jobs=nj,
                           feature_names=[n for n, m in zip(fm.names, cols) if m])
        test_scores = predict_proba(model, fm.values[test_rows][:, cols], n_jobs=nj)
        model.save(out / "model.bin")
    else:
        test_scores = np.full(len(test_rows), 0.5)
    dump_json({"history": history, "best": asdict(best), "columns": [n for n, m in zip(fm.names, cols) if m]},
              out / "tuning.json")
    dump_json({"val_aucs": [float(a) for a in aucs], "val_roc": [c.points() for c in curves]}, out / "cv.json")
    _write_scores(out / "test_scores.csv", [labels[i] for i in test_rows], test_scores)
    return {"best": asdict(best), "cv_auc": float(np.mean(aucs))}


def _write_scores(path: Path, rows: list[dict], scores) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("example_id,driver_id,t_end,label,score\n")
        for r, s in zip(rows, scores):
            fh.write(f"{r['example_id']},{r['driver_id']},{r['t_end']},{r['label']},{float(s)!r}\n")


def _read_scores(path: Path):
    rows = read_labels(path)
    return rows, np.array([float(r["score"]) for r in rows]), np.array([r["label"] for r in rows])


def run_train_nn(cfg: Experiment, up: dict, out: Path) -> dict:
    examples = store_read(up["instances"] / "examples")
    X, y, g = stack_examples(examples)
    sv = SplitView(load_json(up["split"] / "splits.json"), g)
    folds = [(X[sv.fold_train(i)], y[sv.fold_train(i)], X[sv.fold_val(i)], y[sv.fold_val(i)]) for i in range(sv.k)]
    net_cfg, train_cfg = cfg.net, cfg.train
    search = cfg.section("net", "search")
    searched = None
    if search["budget"]:
        hist = []
        choice = tune_net(search["space"], search["budget"], folds, net_cfg, train_cfg, seed=cfg.seed, history=hist)
        net_cfg, train_cfg = apply_choice(net_cfg, train_cfg, choice)
        searched = {"choice": choice, "history": hist}

    test_rows = np.flatnonzero(sv.test)
    val_aucs, val_curves, test_aucs, test_scores, histories = [], [], [], [], []
    for i, (Xa, ya, Xv, yv) in enumerate(folds):
        res = train(Xa, ya, Xv, yv, net_cfg, train_cfg, seed=cfg.seed * 1000 + i)
        save_checkpoint(res.params, out / f"fold{i}.ckpt", train_cfg, {"fold": i, "lr": res.lr})
        val_logits = predict_logits(res.params, Xv)
        val_curves.append(roc_auc(val_logits, yv))
        val_aucs.append(val_curves[-1].auc)
        s = 1.0 / (1.0 + np.exp(-predict_logits(res.params, X[test_rows]).astype(np.float64)))
        test_scores.append(s)
        test_aucs.append(roc_auc(s, y[test_rows]).auc)
        histories.append({"fold": i, "lr": res.lr, "best_epoch": res.best_epoch, "epochs": res.history})
    dump_json({"histories": histories, "search": searched, "net": net_cfg.to_json(), "train": asdict(train_cfg)},
              out / "training.json")
    dump_json({"val_aucs": [float(a) for a in val_aucs], "val_roc": [c.points() for c in val_curves],
               "test_aucs": [float(a) for a in test_aucs]}, out / "cv.json")
    rows = [{"example_id": examples[i].example_id, "driver_id": examples[i].driver_id,
             "t_end": examples[i].t_end, "label": examples[i].label} for i in test_rows]
    _write_scores(out / "test_scores.csv", rows, np.mean(test_scores, axis=0))
    return {"val_auc": float(np.mean(val_aucs)), "test_auc": float(np.mean(test_aucs))}


def _curves_from_points(points):
    from .evaluate import RocCurve

    out = []
    for pts in points:
        a = np.asarray(pts)
        out.append(RocCurve(a[:, 0], a[:, 1], float(np.trapezoid(a[:, 1], a[:, 0]))))
    return out


def run_evaluate(cfg: Experiment, up: dict, out: Path) -> dict:
    fcv = load_json(up["train-forest"] / "cv.json")
    _, fs, fy = _read_scores(up["train-forest"] / "test_scores.csv")
    ncv = load_json(up["train-nn"] / "cv.json")
    _, ns, ny = _read_scores(up["train-nn"] / "test_scores.csv")
    f_test = roc_auc(fs, fy)
    n_test = roc_auc(ns, ny)
    report = {
        "forest": fold_report(fcv["val_aucs"], [f_test.auc], "retrain", _curves_from_points(fcv["val_roc"]), [f_test]),
        "net": fold_report(ncv["val_aucs"], ncv["test_aucs"], "fold_mean", _curves_from_points(ncv["val_roc"]), [n_test]),
        "n_test_examples": int(len(fy)),
        "test_positive_rate": float(np.mean(fy)),
    }
    report["net"]["test_auc_of_mean_score"] = n_test.auc
    dump_json(report, out / "report.json")
    return {"forest_test_auc": report["forest"]["test_auc"], "net_test_auc": report["net"]["test_auc"]}


def run_report(cfg: Experiment, up: dict, out: Path) -> dict:
    accidents = read_accidents(up["generate"] / "accidents.csv")
    timeline_export("accidents", accidents, out / "accidents_timeline")
    for name, stage in (("forest", "train-forest"), ("net", "train-nn")):
        rows, scores, _ = _read_scores(up[stage] / "test_scores.csv")
        timeline_export("predictions", [(r["driver_id"], r["t_end"], s) for r, s in zip(rows, scores)],
                        out / f"{name}_predictions_timeline")
    rep = load_json(up["evaluate"] / "report.json")
    lines = ["| model | protocol | val AUC mean | val AUC std | test AUC |", "|---|---|---|---|---|"]
    for name in ("forest", "net"):
        r = rep[name]
        lines.append(f"| {name} | {r['protocol']} | {r['val_auc_mean']:.4f} | {r['val_auc_std']:.4f} | {r['test_auc']:.4f} |")
    (out / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {}


# config subsets each stage depends on (beyond its upstream outputs)
STAGES = {
    "generate": (run_generate, [], lambda c: {"data": c.raw["data"], "seed": c.seed, "raw_inputs": _raw_inputs(c)}),
    "ingest": (run_ingest, ["generate"], lambda c: {"gap": c.study.gap_tolerance_s}),
    "instances": (run_instances, ["generate", "ingest"], lambda c: {
        k: c.raw["study"][k] for k in ("window_length_s", "windows_per_example", "horizon_days", "predictable_types",
                                       "post_accident_policy")}),
    "split": (run_split, ["instances"], lambda c: {
        "test_fraction": c.study.test_fraction, "folds": c.study.folds, "split": c.raw["split"], "seed": c.seed}),
    "features": (run_features, ["instances"], lambda c: {}),
    "select": (run_select, ["instances", "split", "features"], lambda c: {"q": c.raw["features"]["q"]}),
    "train-forest": (run_train_forest, ["instances", "split", "features", "select"], lambda c: {
        "forest": c.raw["forest"], "empty_selection": c.raw["features"]["empty_selection"], "seed": c.seed}),
    "train-nn": (run_train_nn, ["instances", "split"], lambda c: {"net": c.raw["net"], "seed": c.seed}),
    "evaluate": (run_evaluate, ["train-forest", "train-nn"], lambda c: {}),
    "report": (run_report, ["generate", "train-forest", "train-nn", "evaluate"], lambda c: {}),
}
ORDER = list(STAGES)


def _raw_inputs(c: Experiment) -> dict:
    data = c.raw["data"]
    if data["source"] != "raw":
        return {}
    from .core import file_checksum, tree_checksum

    return {"raw_dir": tree_checksum(data["raw_dir"]), "accidents": file_checksum(data["accidents"])}


def upstream_closure(targets: list[str]) -> list[str]:
    need = set()

    def visit(s):
        if s not in STAGES:
            raise KeyError(f"unknown stage {s!r}")
        if s in need:
            return
        need.add(s)
        for d in STAGES[s][1]:
            visit(d)

    for t in targets:
        visit(t)
    return [s for s in ORDER if s in need]


def stage_key(name: str, cfg: Experiment, inputs: dict[str, str]) -> str:
    payload = {"stage": name, "code": CODE_VERSION, "config": STAGES[name][2](cfg), "inputs": inputs}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def run_pipeline(config, out_dir, stages: list[str] | None = None, seed: int | None = None,
                 timings_path=None, force: bool = False) -> dict:
    """Run ``stages`` (default: all) and everything upstream of them.

    Returns the provenance record, which is also written to
    ``<out_dir>/provenance.json``.
    """
    cfg = config if isinstance(config, Experiment) else load_config(config, seed=seed)
    if seed is not None and isinstance(config, Experiment) and cfg.seed != seed:
        cfg = load_config(cfg.raw, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    todo = upstream_closure(stages or ORDER)
    checksums: dict[str, str] = {}
    records, timings = [], {}
    prov_path = out / "provenance.json"
    for name in todo:
        fn, deps, _ = STAGES[name]
        inputs = {d: checksums[d] for d in deps}
        key = stage_key(name, cfg, inputs)
        sdir = out / name
        rec_path = sdir / STAGE_RECORD
        t0 = time.perf_counter()
        hit = False
        if not force and rec_path.exists():
            rec = load_json(rec_path)
            if rec.get("key") == key and stage_checksum(sdir) == rec.get("output"):
                hit, summary = True, rec.get("summary", {})
        if not hit:
            if sdir.exists():
                shutil.rmtree(sdir)
            sdir.mkdir(parents=True)
            log.info("stage %s: running", name)
            summary = fn(cfg, {d: out / d for d in deps}, sdir)
            summary = json.loads(json.dumps(summary, sort_keys=True, default=str))
            rec = {"stage": name, "key": key, "inputs": inputs, "seed": cfg.seed, "code": CODE_VERSION,
                   "output": stage_checksum(sdir), "summary": summary}
            dump_json(rec, rec_path)
        else:
            log.info("stage %s: cached", name)
        checksums[name] = rec["output"]
        timings[name] = {"seconds": round(time.perf_counter() - t0, 3), "cached": hit}
        records.append({k: rec[k] for k in ("stage", "key", "inputs", "seed", "output", "summary")})
    prov = {"code_version": CODE_VERSION, "experiment": cfg.raw["experiment"]["name"], "seed": cfg.seed,
            "config": cfg.raw, "stages": records}
    # merge with stages run earlier that were not requested this time
    if prov_path.exists():
        old = load_json(prov_path)
        if old.get("code_version") == CODE_VERSION and old.get("seed") == cfg.seed:
            done = {r["stage"] for r in records}
            keep = [r for r in old.get("stages", []) if r["stage"] not in done and (out / r["stage"]).exists()]
            prov["stages"] = sorted(records + keep, key=lambda r: ORDER.index(r["stage"]))
    dump_json(prov, prov_path)
    for name, t in timings.items():
        log.info("%-13s %8.2fs%s", name, t["seconds"], " (cached)" if t["cached"] else "")
    if timings_path is not None:
        dump_json(timings, Path(timings_path))
    prov["_timings"] = timings
    return prov


# comparison of a signal and a null experiment

NULL_BAND = (0.35, 0.65)


def _oracle_panel(exp: Path) -> dict:
    from .tables import read_truth

    truth_path = exp / "generate" / ORACLE_DIR / TRUTH_FILENAME
    if not truth_path.exists():
        return {}
    truth = read_truth(truth_path, oracle=True)
    accidents = read_accidents(exp / "generate" / "accidents.csv")
    prov = load_json(exp / "provenance.json")
    predictable = set(prov["config"]["study"]["predictable_types"])
    hit = {a.driver_id for a in accidents if a.accident_type in predictable}
    drivers = sorted(truth)
    y = np.array([d in hit for d in drivers], dtype=int)
    panel = {}
    if 0 < y.sum() < len(y):
        panel["driver_auc_true_risk"] = roc_auc([truth[d] for d in drivers], y).auc
    rows, _, yl = _read_scores(exp / "train-forest" / "test_scores.csv")
    if 0 < yl.sum() < len(yl):
        panel["test_example_auc_true_risk"] = roc_auc([truth[r["driver_id"]] for r in rows], yl).auc
    return panel


def compare_modes(signal_dir, null_dir) -> dict:
    """Side-by-side AUCs of both approaches on a signal and a null experiment."""
    sig, nul = Path(signal_dir), Path(null_dir)
    for d in (sig, nul):
        if not (d / "provenance.json").exists() or not (d / "evaluate" / "report.json").exists():
            raise StoreError(f"{d}: not a finished experiment directory (run the pipeline through evaluate first)")
    ps, pn = load_json(sig / "provenance.json"), load_json(nul / "provenance.json")
    if ps["code_version"] != pn["code_version"]:
        raise StoreError(f"pipeline versions differ: {ps['code_version']} vs {pn['code_version']}")
    rs, rn = load_json(sig / "evaluate" / "report.json"), load_json(nul / "evaluate" / "report.json")
    out = {"code_version": ps["code_version"], "null_band": list(NULL_BAND), "models": {}}
    for model in ("forest", "net"):
        a, b = rs[model], rn[model]
        out["models"][model] = {
            "protocol": a["protocol"],
            "signal": {k: a[k] for k in ("val_auc_mean", "val_auc_std", "test_auc")},
            "null": {k: b[k] for k in ("val_auc_mean", "val_auc_std", "test_auc")},
            "delta_test_auc": a["test_auc"] - b["test_auc"],
            "delta_val_auc": a["val_auc_mean"] - b["val_auc_mean"],
            "null_in_band": NULL_BAND[0] <= b["test_auc"] <= NULL_BAND[1],
        }
    out["oracle"] = {"signal": _oracle_panel(sig), "null": _oracle_panel(nul)}
    return out


def compare_markdown(cmp: dict) -> str:
    lines = ["| model | protocol | signal val | signal test | null val | null test | delta test | null in band |",
             "|---|---|---|---|---|---|---|---|"]
    for m, r in cmp["models"].items():
        lines.append(
            f"| {m} | {r['protocol']} | {r['signal']['val_auc_mean']:.3f} | {r['signal']['test_auc']:.3f} | "
            f"{r['null']['val_auc_mean']:.3f} | {r['null']['test_auc']:.3f} | {r['delta_test_auc']:+.3f} | "
            f"{'yes' if r['null_in_band'] else 'no'} |"
        )
    for mode, panel in cmp["oracle"].items():
        for k, v in panel.items():
            lines.append(f"\noracle {mode} {k}: {v:.3f}")
    return "\n".join(lines) + "\n"
