"""Command line pipeline: gen, train, build-proto, estimate, eval, bench.

Every command is a pure function of (inputs, config, seed): reruns emit
byte-identical artifacts. JSON is dumped with sorted keys, floats go through
Python's shortest round-trip repr, and wall-clock timings are zeroed unless
explicitly requested, so output bytes never depend on machine speed.

Exit codes: 0 success, 2 input or config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import semantics, synthgen
from .cloud import Pose, SemanticCloud, Space, Symmetry
from .config import RunConfig, config_hash, config_to_dict, load_config
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    FormatError,
    NoInliersError,
    NumericalError,
    SemShapeError,
    TooSparseError,
)
from .evalmetrics import (
    SceneRecord,
    build_report,
    nocs_error_map,
    recon_table,
    write_metric_svg,
    write_report_csv,
    write_report_json,
)
from .io import load_cloud, save_cloud
from .shapemodel import (
    ShapeParams,
    fit_partial,
    load_model,
    save_model,
    synthesize,
    train_category_model,
)
from .posesolver import estimate


def _jsonable(value):
    """Recursively convert numpy containers to plain Python for json.dump."""
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _dump_json(doc, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _child_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# -------------------------------------------------------------------------
# gen
# -------------------------------------------------------------------------


def _dataset_paths(root: Path):
    return root / "category.json", root / "instances", root / "scenes"


def cmd_gen(cfg: RunConfig, out_dir: Path) -> int:
    ds = cfg.dataset
    spec = synthgen.CategorySpec(
        family=ds.family,
        instance_count=ds.instance_count,
        points_per_instance=ds.points_per_instance,
        mode_ranges=ds.mode_ranges,
        symmetry=ds.symmetry,
        seed=cfg.seed,
    )
    dataset = synthgen.generate_category(spec)
    held = dataset.instances[ds.instance_count - ds.holdout:]
    held_ids = dataset.instance_ids[ds.instance_count - ds.holdout:]

    # render every scene before touching the filesystem: a failure mid-way
    # must not leave a half-written dataset behind
    scenes = []
    for i in range(ds.scene_count):
        pick = i % len(held)
        pose_rng = np.random.Generator(np.random.PCG64(_child_seed(cfg.seed, 11, i)))
        gt = synthgen.random_pose(
            pose_rng, held[pick],
            scale_range=ds.scale_range,
            translation_range=ds.translation_range,
        )
        scene_spec = synthgen.SceneSpec(
            gt_pose=gt,
            cull_fraction=ds.cull_fraction,
            noise_sigma=ds.noise_sigma,
            outlier_count=ds.outlier_count,
            seed=_child_seed(cfg.seed, 7, i),
        )
        scenes.append((f"scene_{i:03d}", held_ids[pick], synthgen.render_partial(held[pick], scene_spec)))

    cat_path, inst_dir, scene_dir = _dataset_paths(out_dir)
    inst_dir.mkdir(parents=True, exist_ok=True)
    scene_dir.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for inst_id, inst in zip(dataset.instance_ids, dataset.instances):
        ply = inst_dir / f"{inst_id}.ply"
        save_cloud(ply, inst)
        manifest[f"instances/{ply.name}"] = _sha256(ply)
        manifest[f"instances/{ply.with_suffix('.feat').name}"] = _sha256(ply.with_suffix(".feat"))
    for scene_id, inst_id, rendered in scenes:
        ply = scene_dir / f"{scene_id}.ply"
        save_cloud(ply, rendered.cloud)
        meta = {
            "scene_id": scene_id,
            "instance_id": inst_id,
            "rotation": rendered.spec.gt_pose.rotation.reshape(-1),
            "translation": rendered.spec.gt_pose.translation,
            "size": rendered.spec.gt_pose.size,
            "cull_fraction": rendered.spec.cull_fraction,
            "noise_sigma": rendered.spec.noise_sigma,
            "outlier_count": rendered.spec.outlier_count,
            "outlier_ids": rendered.outlier_ids,
            "view_direction": rendered.view_direction,
            "seed": rendered.spec.seed,
        }
        _dump_json(meta, scene_dir / f"{scene_id}.json")
        manifest[f"scenes/{ply.name}"] = _sha256(ply)
        manifest[f"scenes/{ply.with_suffix('.feat').name}"] = _sha256(ply.with_suffix(".feat"))
        manifest[f"scenes/{scene_id}.json"] = _sha256(scene_dir / f"{scene_id}.json")

    _dump_json(
        {
            "family": spec.family.value,
            "symmetry": spec.symmetry.value,
            "points_per_instance": spec.points_per_instance,
            "instance_ids": dataset.instance_ids,
            "train_ids": dataset.instance_ids[: ds.instance_count - ds.holdout],
            "held_ids": held_ids,
            "mode_names": dataset.mode_names,
            "mode_values": dataset.mode_values,
            "scene_ids": [s[0] for s in scenes],
            "manifest": manifest,
            "provenance": {"config_hash": config_hash(cfg), "seed": cfg.seed},
        },
        cat_path,
    )
    print(f"gen: {len(dataset.instances)} instances, {len(scenes)} scenes -> {out_dir}")
    return 0


def _read_category(dataset_dir: Path) -> dict:
    cat_path = dataset_dir / "category.json"
    if not cat_path.exists():
        raise ConfigError(f"{cat_path} not found; not a dataset directory")
    return json.loads(cat_path.read_text())


def _load_instances(dataset_dir: Path, ids) -> list[SemanticCloud]:
    return [
        load_cloud(dataset_dir / "instances" / f"{i}.ply", space=Space.NOCS)
        for i in ids
    ]


# -------------------------------------------------------------------------
# train / build-proto
# -------------------------------------------------------------------------


def _attach_semantics(model, params_list, instances, k_agg: int):
    mats = [
        semantics.aggregate_instance_features(synthesize(model, p), inst, k_agg)
        for p, inst in zip(params_list, instances)
    ]
    return model.with_semantics(semantics.build_semantic_prototype(mats))


def cmd_train(cfg: RunConfig, dataset_dir: Path, out_path: Path) -> int:
    cat = _read_category(dataset_dir)
    instances = _load_instances(dataset_dir, cat["train_ids"])
    result = train_category_model(instances, cfg.train, category_id=cat["family"])
    model = _attach_semantics(result.model, result.params, instances, cfg.train.k_agg)

    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(out_path, model)
    _dump_json(
        {
            "instance_ids": cat["train_ids"],
            "coeffs": [p.coeffs for p in result.params],
            "scales": [p.scale for p in result.params],
            "final_cds": result.final_cds,
            "provenance": {
                "config_hash": config_hash(cfg),
                "dataset": _sha256(dataset_dir / "category.json"),
            },
        },
        out_path.with_suffix(".params.json"),
    )
    with open(out_path.with_suffix(".log.csv"), "w") as fh:
        fh.write("epoch,active_basis,loss\n")
        for epoch, active, loss in result.history:
            fh.write(f"{int(epoch)},{int(active)},{repr(float(loss))}\n")
    print(
        f"train: {len(instances)} instances, {cfg.train.epochs} epochs, "
        f"mean CD {np.mean(result.final_cds):.3e} -> {out_path}"
    )
    return 0


def cmd_build_proto(cfg: RunConfig, dataset_dir: Path, model_path: Path, out_path: Path) -> int:
    cat = _read_category(dataset_dir)
    instances = _load_instances(dataset_dir, cat["train_ids"])
    model = load_model(model_path)
    params_path = model_path.with_suffix(".params.json")
    if params_path.exists():
        doc = json.loads(params_path.read_text())
        params_list = [
            ShapeParams(np.asarray(c, dtype=np.float64), np.asarray(s, dtype=np.float64))
            for c, s in zip(doc["coeffs"], doc["scales"])
        ]
        if len(params_list) != len(instances):
            raise ConfigError(
                f"{params_path} has {len(params_list)} entries for "
                f"{len(instances)} training instances"
            )
    else:  # no sidecar: recover per-instance params by fitting each cloud
        params_list = [fit_partial(model, inst, cfg.train).params for inst in instances]

    model = _attach_semantics(model, params_list, instances, cfg.train.k_agg)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(out_path, model)
    print(f"build-proto: semantic prototype ({model.semantic_dim} dims) -> {out_path}")
    return 0


# -------------------------------------------------------------------------
# estimate
# -------------------------------------------------------------------------

_POOL = {}


def _estimate_init(model_path, solver_cfg, train_cfg):
    _POOL["model"] = load_model(Path(model_path))
    _POOL["solver"] = solver_cfg
    _POOL["train"] = train_cfg


def _estimate_one(scene_dir: str, scene_id: str) -> dict:
    cloud = load_cloud(Path(scene_dir) / f"{scene_id}.ply", space=Space.CAMERA)
    try:
        res = estimate(_POOL["model"], cloud, _POOL["solver"], _POOL["train"])
    except (TooSparseError, NoInliersError) as exc:
        return {"scene_id": scene_id, "ok": False, "error": "too_sparse", "stage": str(exc)}
    except DegenerateGeometryError as exc:
        return {"scene_id": scene_id, "ok": False, "error": "degenerate", "stage": str(exc)}
    except NumericalError as exc:
        return {"scene_id": scene_id, "ok": False, "error": "numerical", "stage": str(exc)}
    return {
        "scene_id": scene_id,
        "ok": True,
        "rotation": res.pose.rotation.reshape(-1),
        "translation": res.pose.translation,
        "size": res.pose.size,
        "scale": res.pose.scale,
        "inlier_ratio": res.solution.inlier_ratio,
        "inlier_count": int(res.solution.inlier_mask.sum()),
        "rms": res.solution.rms,
        "reliable": res.solution.reliable,
        "fit_cd": res.fit.final_cd,
        "fit_converged": res.fit.converged,
        "coeffs": res.params.coeffs,
        "shape_scale": res.params.scale,
        "keypoints_camera": res.observed_keypoints,
        "predicted_nocs": res.predicted_normalized,
        "match_scores": res.match_scores,
        "stage_timings_ms": res.timings_ms,
    }


def cmd_estimate(
    cfg: RunConfig,
    dataset_dir: Path,
    model_path: Path,
    out_dir: Path,
    jobs: int = 1,
    keep_timings: bool = False,
) -> int:
    cat = _read_category(dataset_dir)
    scene_ids = list(cat["scene_ids"])
    if not scene_ids:
        raise ConfigError(f"{dataset_dir} declares no scenes")
    model = load_model(model_path)
    if model.semantic_prototype is None:
        raise ConfigError(f"{model_path} has no semantic prototype; run build-proto first")

    scene_dir = str(dataset_dir / "scenes")
    if jobs <= 1:
        _estimate_init(model_path, cfg.solver, cfg.train)
        results = [_estimate_one(scene_dir, sid) for sid in scene_ids]
    else:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_estimate_init,
            initargs=(str(model_path), cfg.solver, cfg.train),
        ) as pool:
            results = list(pool.map(_estimate_one, [scene_dir] * len(scene_ids), scene_ids))

    provenance = {
        "config_hash": config_hash(cfg),
        "model_sha256": _sha256(model_path),
        "dataset": _sha256(dataset_dir / "category.json"),
    }
    results_dir = out_dir / "results"
    results_dir.mkdir(parents=True, exist_ok=True)
    ok = 0
    for doc in results:
        if doc["ok"]:
            ok += 1
        if not keep_timings:
            doc["stage_timings_ms"] = {k: 0.0 for k in doc.get("stage_timings_ms", {})}
        doc["provenance"] = provenance
        _dump_json(doc, results_dir / f"{doc['scene_id']}.json")
    _dump_json(
        {
            "scene_count": len(results),
            "ok": ok,
            "failed": len(results) - ok,
            "results": [f"results/{doc['scene_id']}.json" for doc in results],
            "provenance": provenance,
        },
        out_dir / "index.json",
    )
    print(f"estimate: {ok}/{len(results)} scenes solved -> {out_dir}")
    return 0 if ok > 0 else 3


# -------------------------------------------------------------------------
# eval
# -------------------------------------------------------------------------


def _pose_from_doc(doc) -> Pose:
    return Pose(
        np.asarray(doc["rotation"], dtype=np.float64).reshape(3, 3),
        np.asarray(doc["translation"], dtype=np.float64),
        np.asarray(doc["size"], dtype=np.float64),
    )


def cmd_eval(cfg: RunConfig, results_dir: Path, dataset_dir: Path, out_dir: Path) -> int:
    cat = _read_category(dataset_dir)
    symmetry = Symmetry(cat["symmetry"])
    category = cat["family"]
    index_path = results_dir / "index.json"
    if not index_path.exists():
        raise ConfigError(f"{index_path} not found; not a results directory")
    index = json.loads(index_path.read_text())

    records, misses = [], 0
    for rel in index["results"]:
        doc = json.loads((results_dir / rel).read_text())
        gt_path = dataset_dir / "scenes" / f"{doc['scene_id']}.json"
        if not gt_path.exists():
            raise ConfigError(f"missing ground truth {gt_path}")
        if not doc["ok"]:
            misses += 1
            continue
        gt_doc = json.loads(gt_path.read_text())
        gt = _pose_from_doc(gt_doc)
        nocs_rms = None
        if doc.get("keypoints_camera"):
            kp = SemanticCloud(
                np.asarray(doc["keypoints_camera"], dtype=np.float64), None, Space.CAMERA
            )
            pred_nocs = SemanticCloud(
                np.asarray(doc["predicted_nocs"], dtype=np.float64), None, Space.NOCS
            )
            nocs_rms = nocs_error_map(pred_nocs, kp, gt)[1]["rms"]
        records.append(
            SceneRecord(
                category=category,
                pred=_pose_from_doc(doc),
                gt=gt,
                symmetry=symmetry,
                recon_cd=doc.get("fit_cd"),
                nocs_rms=nocs_rms,
            )
        )
    if not records:
        raise NumericalError("no successful scene results to evaluate")

    report = build_report(records, iou_method=cfg.eval.iou_method,
                          misses={category: misses})
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out_dir / "report.csv")
    write_report_json(
        report,
        out_dir / "report.json",
        provenance={
            "config_hash": config_hash(cfg),
            "dataset": _sha256(dataset_dir / "category.json"),
            "failed_scenes": misses,
        },
    )
    recon_table(
        {category: [r.recon_cd for r in records if r.recon_cd is not None]},
        csv_path=out_dir / "recon_table.csv",
    )
    if cfg.eval.svg:
        for metric in ("map_5deg2cm", "map_5deg5cm", "map_10deg2cm", "map_10deg5cm",
                       "iou50", "iou75"):
            write_metric_svg(report, metric, out_dir / f"{metric}.svg")
    row = report.mean
    print(
        "eval: 5deg2cm {0:.1f}  5deg5cm {1:.1f}  10deg2cm {2:.1f}  10deg5cm {3:.1f}  "
        "iou50 {4:.1f}  iou75 {5:.1f} -> {6}".format(
            row["map_5deg2cm"], row["map_5deg5cm"], row["map_10deg2cm"],
            row["map_10deg5cm"], row["iou50"], row["iou75"], out_dir,
        )
    )
    return 0


# -------------------------------------------------------------------------
# bench
# -------------------------------------------------------------------------


def cmd_bench(cfg: RunConfig, out_dir: Path, jobs: int = 1) -> int:
    dataset_dir = out_dir / "dataset"
    model_path = out_dir / "model.dlsm"
    est_dir = out_dir / "estimate"
    report_dir = out_dir / "report"
    rc = cmd_gen(cfg, dataset_dir)
    if rc == 0:
        rc = cmd_train(cfg, dataset_dir, model_path)
    if rc == 0:
        rc = cmd_estimate(cfg, dataset_dir, model_path, est_dir, jobs=jobs)
    if rc == 0:
        rc = cmd_eval(cfg, est_dir, dataset_dir, report_dir)
    if rc != 0:
        return rc
    report = json.loads((report_dir / "report.json").read_text())
    _dump_json(
        {
            "config": config_to_dict(cfg),
            "config_hash": config_hash(cfg),
            "dataset": _sha256(dataset_dir / "category.json"),
            "model_sha256": _sha256(model_path),
            "mean": report["mean"],
            "scenes": json.loads((est_dir / "index.json").read_text())["scene_count"],
        },
        out_dir / "bench_summary.json",
    )
    print(f"bench: complete -> {out_dir}")
    return 0


# -------------------------------------------------------------------------
# argument parsing
# -------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semshape",
        description="Semantic shape reconstruction and 9-DoF pose estimation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", type=Path, default=None, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        p.add_argument("--out", type=Path, required=out_required, help="output path")

    p = sub.add_parser("gen", help="generate a synthetic category dataset")
    common(p)

    p = sub.add_parser("train", help="learn a category shape model")
    p.add_argument("dataset", type=Path)
    common(p)

    p = sub.add_parser("build-proto", help="attach a semantic prototype to a model")
    p.add_argument("dataset", type=Path)
    p.add_argument("model", type=Path)
    common(p)

    p = sub.add_parser("estimate", help="recover pose and shape for every scene")
    p.add_argument("dataset", type=Path)
    p.add_argument("model", type=Path)
    p.add_argument("--timings", action="store_true",
                   help="record stage wall times (breaks byte determinism)")
    common(p)

    p = sub.add_parser("eval", help="score estimate results against ground truth")
    p.add_argument("results", type=Path)
    p.add_argument("dataset", type=Path)
    common(p)

    p = sub.add_parser("bench", help="run the full pipeline end to end")
    common(p)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.command == "gen":
            return cmd_gen(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.dataset, args.out)
        if args.command == "build-proto":
            return cmd_build_proto(cfg, args.dataset, args.model, args.out)
        if args.command == "estimate":
            return cmd_estimate(cfg, args.dataset, args.model, args.out,
                                jobs=args.jobs, keep_timings=args.timings)
        if args.command == "eval":
            return cmd_eval(cfg, args.results, args.dataset, args.out)
        if args.command == "bench":
            return cmd_bench(cfg, args.out, jobs=args.jobs)
        raise AssertionError(f"unhandled command {args.command}")
    except (ConfigError, FormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except SemShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
