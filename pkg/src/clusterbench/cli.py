"""End-to-end pipeline: ingest/synth -> bench -> knn -> fit -> eval -> report.

A single JSON config drives everything through its ``stages`` array; every
stage writes its artifacts plus a ``stage.json`` listing their sha256
checksums, so reruns skip finished stages and identical configs produce
byte-identical artifact trees (timestamps live only in the sidecar log).
All randomness flows from one root seed through named substreams, one per
stage, so adding a stage never perturbs another stage's draws.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchmarks as bm
from . import feature_store as fs
from . import heads
from . import kmeans as km
from . import label_refine as lr
from . import metrics as mt
from . import neighbors as nb
from .seeding import derive_seed
from .semantic_tree import SemanticTree, coarsen, leaf_classes, load_tree, write_coarsen_remap
from .synth import SynthSpec, synth_fixture

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

STAGES = (
    "ingest", "synth", "bench", "knn", "kmeans", "train", "refine", "probe",
    "eval", "report",
)

METHOD_ORDER = {"kmeans": 0, "temi": 1, "scan": 2, "probe": 3}


class ConfigError(Exception):
    pass


def _canonical(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _diagnostic(kind: str, message: str, stage: dict | None = None) -> None:
    doc = {"error": kind, "message": message}
    if stage is not None:
        doc["stage"] = {"stage": stage.get("stage"), "name": stage.get("name")}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)


class Pipeline:
    def __init__(self, config: dict, out: Path, threads: int, root_seed: int):
        self.config = config
        self.out = out
        self.threads = threads
        self.root_seed = root_seed

    # -- plumbing ---------------------------------------------------------

    def stage_seed(self, stage_cfg: dict) -> int:
        if "seed" in stage_cfg:
            return int(stage_cfg["seed"])
        return derive_seed(self.root_seed, f"{stage_cfg['stage']}:{stage_cfg.get('name', '')}")

    def stage_dir(self, stage: str, name: str) -> Path:
        d = self.out / stage / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _params_doc(self, stage_cfg: dict) -> dict:
        return {k: v for k, v in stage_cfg.items() if k != "threads"}

    def finish_stage(self, sdir: Path, stage_cfg: dict, artifacts: list[Path]) -> None:
        doc = {
            "params": self._params_doc(stage_cfg),
            "artifacts": {
                p.relative_to(self.out).as_posix(): fs.sha256_file(p)
                for p in sorted(artifacts)
            },
        }
        (sdir / "stage.json").write_text(_canonical(doc))

    def should_skip(self, sdir: Path, stage_cfg: dict) -> bool:
        marker = sdir / "stage.json"
        if not marker.exists():
            return False
        try:
            doc = json.loads(marker.read_text())
        except json.JSONDecodeError:
            return False
        if doc.get("params") != self._params_doc(stage_cfg):
            return False
        for rel, digest in doc.get("artifacts", {}).items():
            p = self.out / rel
            if not p.exists() or fs.sha256_file(p) != digest:
                return False
        return True

    # -- dataset access ---------------------------------------------------

    def split_dir(self, dataset: str, split: str) -> Path:
        return self.out / "datasets" / dataset / split

    def load_split(self, dataset: str, split: str, normalize: bool = True) -> dict:
        mpath = self.split_dir(dataset, split) / "manifest.json"
        if not mpath.exists():
            raise FileNotFoundError(f"no manifest for dataset {dataset!r} split {split!r}: {mpath}")
        manifest = fs.load_manifest(mpath)
        base = mpath.parent
        out = {
            "manifest": manifest,
            "features": fs.load_features(manifest.path("features", base), normalize=normalize),
            "labels": fs.load_labels(manifest.path("labels", base)),
        }
        if "multilabels" in manifest.paths:
            out["multilabels"] = fs.load_multilabels(
                manifest.path("multilabels", base), out["labels"].n_classes
            )
        if "tree" in manifest.paths:
            out["tree"] = load_tree(manifest.path("tree", base))
        if "node_terms" in manifest.paths:
            out["node_terms"] = {
                k: list(v)
                for k, v in json.loads(manifest.path("node_terms", base).read_text()).items()
            }
        if "similarity" in manifest.paths:
            out["similarity"] = fs.load_similarity(
                manifest.path("similarity", base), manifest.path("terms", base)
            )
        return out

    def write_split(
        self, dataset: str, split: str, features: fs.FeatureMatrix, labels: fs.LabelVector,
        multilabels: fs.MultiLabelSets | None = None,
        similarity: fs.SimilarityMatrix | None = None,
        shared: dict[str, str] | None = None,
    ) -> list[Path]:
        sdir = self.split_dir(dataset, split)
        sdir.mkdir(parents=True, exist_ok=True)
        fs.write_features(sdir / "features.fbcf", features)
        fs.write_labels(sdir / "labels.fbcf", labels)
        paths = {"features": "features.fbcf", "labels": "labels.fbcf"}
        written = [sdir / "features.fbcf", sdir / "labels.fbcf"]
        if multilabels is not None:
            fs.write_multilabels(sdir / "multilabels.txt", multilabels)
            paths["multilabels"] = "multilabels.txt"
            written.append(sdir / "multilabels.txt")
        if similarity is not None:
            fs.write_array(sdir / "similarity.fbcf", similarity.values)
            paths["similarity"] = "similarity.fbcf"
            written.append(sdir / "similarity.fbcf")
            if shared is None or "terms" not in shared:
                fs.write_term_registry(sdir / "terms.tsv", similarity.term_registry)
                paths["terms"] = "terms.tsv"
                written.append(sdir / "terms.tsv")
        if shared:
            paths.update(shared)
        manifest = fs.DatasetManifest(name=dataset, split=split, paths=paths)
        fs.write_manifest(sdir / "manifest.json", manifest)
        written.append(sdir / "manifest.json")
        return written

    # -- stages -----------------------------------------------------------

    def run(self, only_stage: str | None = None) -> None:
        stages = self.config.get("stages", [])
        for stage_cfg in stages:
            if only_stage is not None and stage_cfg["stage"] != only_stage:
                continue
            self.run_stage(stage_cfg)

    def run_stage(self, stage_cfg: dict) -> None:
        stage = stage_cfg["stage"]
        name = stage_cfg.get("name", stage)
        sdir = self.stage_dir(stage, name)
        if self.should_skip(sdir, stage_cfg):
            logger.info("stage %s/%s up to date, skipping", stage, name)
            return
        logger.info("running stage %s/%s", stage, name)
        handler = getattr(self, f"_stage_{stage}")
        artifacts = handler(stage_cfg, sdir)
        self.finish_stage(sdir, stage_cfg, artifacts)

    def _stage_synth(self, cfg: dict, sdir: Path) -> list[Path]:
        spec = SynthSpec(
            name=cfg["name"],
            blobs=int(cfg["blobs"]),
            per_blob=int(cfg["per_blob"]),
            dim=int(cfg["dim"]),
            separation=float(cfg.get("separation", 10.0)),
            imbalance=cfg.get("imbalance", "balanced"),
            imbalance_ratio=float(cfg.get("imbalance_ratio", 0.5)),
            tree_shape=cfg.get("tree"),
            similarity_noise=cfg.get("similarity_noise"),
            val_fraction=float(cfg.get("val_fraction", 0.2)),
            seed=self.stage_seed(cfg),
        )
        synth_fixture(self.out / "datasets", spec)
        base = self.out / "datasets" / spec.name
        return sorted(p for p in base.rglob("*") if p.is_file())

    def _stage_ingest(self, cfg: dict, sdir: Path) -> list[Path]:
        dataset, split = cfg["name"], cfg.get("split", "train")
        paths = {"features": cfg["features"], "labels": cfg["labels"]}
        for key in ("multilabels", "similarity", "terms", "tree", "node_terms"):
            if key in cfg:
                paths[key] = cfg[key]
        for key, p in paths.items():
            if not Path(p).exists():
                raise FileNotFoundError(f"ingest {dataset!r}: missing {key} file {p}")
        features = fs.load_features(paths["features"])
        labels = fs.load_labels(paths["labels"], n_rows_expected=features.n_rows)
        logger.info("ingested %s/%s: %d rows, %d classes", dataset, split,
                    features.n_rows, labels.n_classes)
        tdir = self.split_dir(dataset, split)
        tdir.mkdir(parents=True, exist_ok=True)
        manifest = fs.DatasetManifest(
            name=dataset, split=split,
            paths={k: str(Path(p).resolve()) for k, p in paths.items()},
        )
        fs.write_manifest(tdir / "manifest.json", manifest)
        return [tdir / "manifest.json"]

    def _stage_bench(self, cfg: dict, sdir: Path) -> list[Path]:
        source = cfg["dataset"]
        spec = bm.BenchmarkSpec(kind=cfg["kind"], params=dict(cfg.get("params", {})))
        spec.validate()
        train = self.load_split(source, "train", normalize=False)
        val = self.load_split(source, "val", normalize=False)
        name = cfg["name"]
        artifacts: list[Path] = []
        if spec.kind == "coarse":
            artifacts += self._bench_coarse(name, spec, train, val, sdir)
        elif spec.kind == "odd_halving":
            mask = bm.odd_halving(train["labels"], seed=self.stage_seed(cfg))
            artifacts += self._bench_row_filter(name, train, val, mask, sdir, spec)
        else:
            classes = self._bench_class_set(cfg, spec, train)
            bm.write_class_subset(sdir / "subset", classes, spec, train["labels"])
            artifacts += [sdir / "subset.classes.csv", sdir / "subset.provenance.json"]
            artifacts += self._bench_subset(name, classes, train, val)
        return artifacts

    def _bench_class_set(self, cfg: dict, spec: bm.BenchmarkSpec, train: dict) -> set[int]:
        hist = bm.class_histogram(train["labels"])
        kind, params = spec.kind, spec.params
        if kind == "percentile":
            return bm.percentile_split(hist, float(params["half_width"]))
        if kind == "imbalanced_pair":
            imbalanced, centered = bm.imbalanced_pair(hist)
            return imbalanced if params["side"] == "imbalanced" else centered
        if kind == "random_k":
            seed = int(params.get("seed", self.stage_seed(cfg)))
            return bm.random_subset(set(hist.class_ids.tolist()), int(params["k"]), seed)
        if kind == "model_based":
            if "probe" in params:
                table_path = self.out / "probe" / params["probe"] / "per_class_acc.csv"
            else:
                table_path = Path(params["acc_table"])
            table = bm.load_per_class_acc(table_path)
            return bm.model_based_subset(table, int(params["k"]))
        if kind == "leaf":
            tree: SemanticTree = train["tree"]
            class_nodes = [str(c) for c in range(train["labels"].n_classes)]
            if params.get("universe", "dataset") == "dataset":
                leaves = leaf_classes(tree, class_nodes)
            else:
                leaves = leaf_classes(tree) & set(class_nodes)
            return {int(n) for n in leaves}
        if kind == "union":
            out: set[int] = set()
            for other in params["specs"]:
                csv = self.out / "bench" / other / "subset.classes.csv"
                out |= {int(line) for line in csv.read_text().split()}
            return out
        raise ConfigError(f"unsupported benchmark kind {kind!r}")

    def _bench_subset(self, name: str, classes: set[int], train: dict, val: dict) -> list[Path]:
        artifacts = []
        for split, data in (("train", train), ("val", val)):
            feats, labels = fs.subset(data["features"], data["labels"], classes)
            ml = None
            if "multilabels" in data:
                ml = _remap_multilabels(data["multilabels"], labels.remap, data["labels"].labels)
            sim = _filter_similarity(data, data["labels"].labels, classes)
            artifacts += self.write_split(name, split, feats, labels, ml, sim)
        return artifacts

    def _bench_row_filter(
        self, name: str, train: dict, val: dict, mask: np.ndarray, sdir: Path,
        spec: bm.BenchmarkSpec,
    ) -> list[Path]:
        artifacts = []
        feats = fs.FeatureMatrix(train["features"].values[mask], train["features"].normalized)
        labels = fs.LabelVector(train["labels"].labels[mask], train["labels"].n_classes)
        ml = None
        if "multilabels" in train:
            src = train["multilabels"]
            keep = np.flatnonzero(mask)
            ml = fs.MultiLabelSets(
                sets=tuple(src.sets[i] for i in keep), primary=src.primary[keep],
                n_classes=src.n_classes,
            )
        artifacts += self.write_split(name, "train", feats, labels, ml)
        artifacts += self.write_split(
            name, "val", val["features"], val["labels"], val.get("multilabels")
        )
        (sdir / "mask.csv").write_text(
            "\n".join(str(int(m)) for m in mask) + "\n"
        )
        artifacts.append(sdir / "mask.csv")
        return artifacts

    def _bench_coarse(
        self, name: str, spec: bm.BenchmarkSpec, train: dict, val: dict, sdir: Path
    ) -> list[Path]:
        tree: SemanticTree = train["tree"]
        artifacts = []
        max_depth = int(spec.params["max_depth"])
        result = None
        for split, data in (("train", train), ("val", val)):
            result = coarsen(tree, data["labels"], max_depth)
            ml = None
            if "multilabels" in data:
                ml = _coarsen_multilabels(data["multilabels"], result.remap)
            artifacts += self.write_split(name, split, data["features"], result.labels, ml)
        write_coarsen_remap(sdir / "remap.csv", result)
        artifacts.append(sdir / "remap.csv")
        return artifacts

    def _stage_knn(self, cfg: dict, sdir: Path) -> list[Path]:
        data = self.load_split(cfg["dataset"], cfg.get("split", "train"))
        table = nb.mine_knn(
            data["features"], k=int(cfg.get("k", 50)), block=int(cfg.get("block", 1024)),
            threads=self.threads,
        )
        nb.save_neighbors(sdir / "neighbors", table)
        return [sdir / "neighbors.ids.fbcf", sdir / "neighbors.sims.fbcf"]

    def _stage_kmeans(self, cfg: dict, sdir: Path) -> list[Path]:
        data = self.load_split(cfg["dataset"], "train")
        c = int(cfg.get("clusters", data["labels"].n_classes))
        centroids = km.kmeans_fit(
            data["features"], c,
            init=cfg.get("init", "kmeanspp"),
            max_iter=int(cfg.get("max_iter", 100)),
            tol=float(cfg.get("tol", 1e-6)),
            seed=self.stage_seed(cfg),
            threads=self.threads,
        )
        km.save_centroids(sdir / "centroids.fbcf", centroids)
        km.write_run_log(sdir / "run_log.csv", centroids)
        return [sdir / "centroids.fbcf", sdir / "run_log.csv"]

    def _stage_train(self, cfg: dict, sdir: Path) -> list[Path]:
        data = self.load_split(cfg["dataset"], "train")
        table = nb.load_neighbors(self.out / "knn" / cfg["knn"] / "neighbors")
        overrides = {
            k: cfg[k] for k in heads.TrainConfig.__dataclass_fields__
            if k in cfg and k not in ("n_clusters", "seed")
        }
        config = heads.TrainConfig(
            n_clusters=int(cfg.get("clusters", data["labels"].n_classes)),
            objective=cfg.get("objective", "temi"),
            seed=self.stage_seed(cfg),
            **overrides,
        )
        bank, log = heads.train(data["features"], table, config)
        heads.save_head_bank(sdir / "headbank.ckpt", bank)
        (sdir / "training_log.csv").write_text(log.to_csv())
        return [sdir / "headbank.ckpt", sdir / "training_log.csv"]

    def _stage_refine(self, cfg: dict, sdir: Path) -> list[Path]:
        source = cfg["dataset"]
        mode = cfg.get("mode", "parent")
        train = self.load_split(source, "train", normalize=False)
        val = self.load_split(source, "val", normalize=False)
        tree: SemanticTree = train["tree"]
        node_terms = train["node_terms"]
        temperature = float(cfg.get("temperature", lr.DEFAULT_TEMPERATURE))
        pinned = lr.canonical_terms(train["similarity"], train["labels"], node_terms)
        terms = {**node_terms, **pinned}
        results = {}
        for split, data in (("train", train), ("val", val)):
            results[split] = lr.hzr(
                tree, data["similarity"], data["labels"], mode=mode,
                node_to_terms=terms, temperature=temperature,
            )
        rt, rv, dropped_t, dropped_v = lr.intersect_refined(results["train"], results["val"])
        artifacts = []
        name = cfg["name"]
        for split, res, data, dropped in (
            ("train", rt, train, dropped_t), ("val", rv, val, dropped_v),
        ):
            keep = np.ones(data["labels"].n_rows, dtype=bool)
            if dropped:
                keep[np.array(dropped, dtype=np.int64)] = False
            feats = fs.FeatureMatrix(data["features"].values[keep], data["features"].normalized)
            artifacts += self.write_split(name, split, feats, res.labels)
            lr.write_traces(sdir / f"traces_{split}.jsonl", results[split])
            (sdir / f"summary_{split}.csv").write_text(
                lr.refine_summary_csv(data["labels"].n_classes, res, len(dropped))
            )
            artifacts += [sdir / f"traces_{split}.jsonl", sdir / f"summary_{split}.csv"]
        return artifacts

    def _stage_probe(self, cfg: dict, sdir: Path) -> list[Path]:
        dataset = cfg["dataset"]
        train = self.load_split(dataset, "train")
        val = self.load_split(dataset, "val")
        result = heads.linear_probe(
            train["features"], train["labels"], val["features"], val["labels"],
            lrs=tuple(cfg.get("lrs", heads.DEFAULT_PROBE_LRS)),
            wds=tuple(cfg.get("wds", heads.DEFAULT_PROBE_WDS)),
            epochs=int(cfg.get("epochs", 100)),
            seed=self.stage_seed(cfg),
        )
        (sdir / "per_class_acc.csv").write_text(result.per_class_csv())
        (sdir / "probe.json").write_text(_canonical({
            "accuracy": result.accuracy,
            "best_lr": result.best_lr,
            "best_weight_decay": result.best_weight_decay,
            "benchmark": dataset,
            "method": "probe",
        }))
        return [sdir / "per_class_acc.csv", sdir / "probe.json"]

    def _stage_eval(self, cfg: dict, sdir: Path) -> list[Path]:
        dataset = cfg["dataset"]
        method = cfg["method"]
        data = self.load_split(dataset, "val")
        labels = data["labels"]
        if method == "kmeans":
            centroids = km.load_centroids(self.out / "kmeans" / cfg["model"] / "centroids.fbcf")
            k = min(5, centroids.n_clusters)
            pred = km.kmeans_predict_topk(centroids, data["features"], k)
            n_clusters = centroids.n_clusters
        elif method in ("temi", "scan"):
            bank = heads.load_head_bank(self.out / "train" / cfg["model"] / "headbank.ckpt")
            head = int(np.argmin(bank.final_losses))
            k = min(5, bank.n_clusters)
            pred = heads.predict_topk(bank, head, data["features"], k)
            n_clusters = bank.n_clusters
        else:
            raise ConfigError(f"unknown eval method {method!r}")

        multilabels = data.get("multilabels")
        if multilabels is None:
            multilabels = fs.MultiLabelSets(
                sets=tuple(frozenset([int(c)]) for c in labels.labels),
                primary=labels.labels.copy(), n_classes=labels.n_classes,
            )
        fam = mt.accuracy_family(pred, multilabels)
        assignment = mt.hungarian(mt.contingency_matrix(
            pred.top1, multilabels.primary, pred.n_clusters, multilabels.n_classes
        ))
        mapped = assignment.apply(pred.top1)
        correct = mapped == multilabels.primary
        ece_value, bins = mt.ece(pred.msp, correct, n_bins=int(cfg.get("n_bins", 15)))
        metrics_out = dict(fam)
        metrics_out["nmi"] = mt.nmi(pred.top1, labels.labels)
        metrics_out["ece"] = ece_value
        metrics_out["mean_msp"] = float(pred.msp.mean())
        protocol: dict = {"top_k": pred.k, "confidence_source": pred.confidence_source}
        if cfg.get("repeats"):
            reals = mt.real_protocol(
                pred, multilabels, repeats=int(cfg["repeats"]), seed=self.stage_seed(cfg)
            )
            for key, (mean, std) in reals.items():
                metrics_out[f"real_{key}"] = mean
                metrics_out[f"real_{key}_std"] = std
            protocol["repeats"] = int(cfg["repeats"])
        if cfg.get("validity"):
            tr = self.load_split(dataset, "train")
            table = None
            if "knn" in cfg:
                table = nb.load_neighbors(self.out / "knn" / cfg["knn"] / "neighbors")
            vi = mt.validity_indices(tr["features"], tr["labels"], table)
            for key, value in vi.items():
                metrics_out[f"validity_{key}"] = value
        report = mt.EvalReport(
            benchmark=dataset, method=method, n_rows=labels.n_rows,
            n_classes=labels.n_classes, n_clusters=n_clusters,
            metrics=metrics_out, mapping=assignment.mapping,
            protocol=protocol, bins=bins.rows(),
            notes={"nmi_normalization": "arithmetic_mean", "ece_bins": bins.n_bins},
        )
        (sdir / "report.json").write_text(report.to_json())
        return [sdir / "report.json"]

    def _stage_report(self, cfg: dict, sdir: Path) -> list[Path]:
        eval_dir = self.out / "eval"
        reports = []
        if eval_dir.exists():
            for p in sorted(eval_dir.glob("*/report.json")):
                reports.append(mt.EvalReport.from_json(p.read_text()))
        probe_dir = self.out / "probe"
        if probe_dir.exists():
            for p in sorted(probe_dir.glob("*/probe.json")):
                doc = json.loads(p.read_text())
                reports.append(mt.EvalReport(
                    benchmark=doc["benchmark"], method="probe", n_rows=0, n_classes=0,
                    n_clusters=0, metrics={"acc_top1": doc["accuracy"]}, mapping={},
                ))
        if not reports:
            raise ConfigError(f"no evaluation reports under {eval_dir}")
        reports.sort(key=lambda r: (r.benchmark, METHOD_ORDER.get(r.method, 9), r.method))
        metric_names = sorted({m for r in reports for m in r.metrics})
        lines = ["benchmark,method,n_rows,n_classes,n_clusters," + ",".join(metric_names)]
        rows = []
        for r in reports:
            cells = [r.benchmark, r.method, str(r.n_rows), str(r.n_classes), str(r.n_clusters)]
            cells += [repr(r.metrics[m]) if m in r.metrics else "" for m in metric_names]
            lines.append(",".join(cells))
            rows.append({
                "benchmark": r.benchmark, "method": r.method, "n_rows": r.n_rows,
                "n_classes": r.n_classes, "n_clusters": r.n_clusters,
                "metrics": {k: r.metrics[k] for k in sorted(r.metrics)},
            })
        (sdir / "summary.csv").write_text("\n".join(lines) + "\n")
        (sdir / "summary.json").write_text(_canonical(rows))
        return [sdir / "summary.csv", sdir / "summary.json"]


def _remap_multilabels(
    ml: fs.MultiLabelSets, remap: dict[int, int], original_labels: np.ndarray
) -> fs.MultiLabelSets:
    """Row-filter label sets to kept classes and rewrite ids through the remap."""
    kept_rows = [i for i, lab in enumerate(original_labels.tolist()) if lab in remap]
    sets = []
    primary = []
    for i in kept_rows:
        s = frozenset(remap[c] for c in ml.sets[i] if c in remap)
        sets.append(s)
        primary.append(remap[int(ml.primary[i])])
    return fs.MultiLabelSets(
        sets=tuple(sets), primary=np.array(primary, dtype=np.int64), n_classes=len(remap)
    )


def _coarsen_multilabels(ml: fs.MultiLabelSets, remap: dict[int, int]) -> fs.MultiLabelSets:
    sets = tuple(frozenset(remap[c] for c in s) for s in ml.sets)
    primary = np.array([remap[int(p)] for p in ml.primary], dtype=np.int64)
    return fs.MultiLabelSets(sets=sets, primary=primary, n_classes=max(remap.values()) + 1)


def _filter_similarity(data: dict, original_labels: np.ndarray, classes: set[int]):
    if "similarity" not in data:
        return None
    mask = np.isin(original_labels, np.array(sorted(classes), dtype=np.int64))
    src = data["similarity"]
    return fs.SimilarityMatrix(values=src.values[mask], term_registry=src.term_registry)


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def _validate_config(config: dict) -> None:
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    stages = config.get("stages")
    if not isinstance(stages, list) or not stages:
        raise ConfigError("config needs a non-empty 'stages' array")
    for i, stage_cfg in enumerate(stages):
        if not isinstance(stage_cfg, dict) or "stage" not in stage_cfg:
            raise ConfigError(f"stages[{i}]: missing 'stage' field")
        if stage_cfg["stage"] not in STAGES:
            raise ConfigError(f"stages[{i}]: unknown stage {stage_cfg['stage']!r}")


def run_config(
    config_path: str | Path,
    out: str | Path | None = None,
    threads: int = 1,
    seed: int | None = None,
    only_stage: str | None = None,
) -> int:
    """Execute a pipeline config; returns the process exit code."""
    stage_cfg = None
    try:
        config_path = Path(config_path)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            config = json.loads(config_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config does not parse: {exc}") from exc
        _validate_config(config)
        out_dir = Path(out) if out is not None else Path(config.get("out", "artifacts"))
        out_dir.mkdir(parents=True, exist_ok=True)
        root_seed = seed if seed is not None else int(config.get("seed", 0))
        log_path = out_dir / "run.log"
        handler = logging.FileHandler(log_path)
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logging.getLogger("clusterbench").addHandler(handler)
        try:
            pipeline = Pipeline(config, out_dir, threads=threads, root_seed=root_seed)
            for stage_cfg in config["stages"]:
                if only_stage is not None and stage_cfg["stage"] != only_stage:
                    continue
                pipeline.run_stage(stage_cfg)
            stage_cfg = None
        finally:
            logging.getLogger("clusterbench").removeHandler(handler)
            handler.close()
    except (ConfigError, FileNotFoundError) as exc:
        _diagnostic(type(exc).__name__, str(exc), stage_cfg)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surfaced as a structured diagnostic
        _diagnostic(type(exc).__name__, str(exc), stage_cfg)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="clusterbench",
        description="Feature-space clustering engine and benchmark pipeline.",
    )
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {"run": None, **{s: s for s in STAGES}}
    for command, only in commands.items():
        p = sub.add_parser(command, help=f"run {'all stages' if only is None else only + ' stages'} from a config")
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(only=only)
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    return run_config(
        args.config, out=args.out, threads=args.threads, seed=args.seed,
        only_stage=args.only,
    )


if __name__ == "__main__":
    sys.exit(main())
