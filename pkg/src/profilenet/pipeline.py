"""End-to-end workflow: profiles, description, importance, per-profile networks.

Each stage writes its own files into ``output_dir`` and can be re-run alone
from the intermediate files of the earlier stages (``classes.csv`` and
``posteriors.csv``); the results are identical to a full run.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__, _kernels
from .dataset import ColumnKind, Dataset, encode_categoricals, load_table, split_by_group, standardize
from .errors import ConfigError, DataError, ProfileNetError, TooFewRows
from .ggm import (Network, bootstrap_network, centrality, compare_networks, comparison_to_csv,
                  estimate_network)
from .lpa import ALL_MODELS, Parameterization, Strategy, classify, select_model, sweep_models
from .profile_desc import correlations_to_csv, describe_profiles, membership_correlations
from .relimp import PredictorGroup, SubsetR2, importance_matrix
from .rng import child_seed

log = logging.getLogger(__name__)

CONFIG_KEYS = {
    "input_path", "classification_vars", "illustrative_quant", "illustrative_qual",
    "importance_responses", "predictor_groups", "k_range", "models", "gamma", "bootstrap_B",
    "seed", "output_dir", "alpha", "delimiter", "standardize", "selection", "n_starts", "max_iter",
    "tol", "r2_floor", "exclude_spurious", "network_vars", "grid_size", "ordinal_numeric",
}


@dataclass
class PipelineConfig:
    input_path: str
    classification_vars: list
    illustrative_quant: list = field(default_factory=list)
    illustrative_qual: list = field(default_factory=list)
    importance_responses: Any = "posteriors"
    predictor_groups: dict | None = None
    k_range: tuple = (3, 6)
    models: list = field(default_factory=lambda: [p.number for p in ALL_MODELS])
    gamma: float = 0.5
    bootstrap_B: int = 0
    seed: int = 0
    output_dir: str = "output"
    alpha: float = 0.05
    delimiter: str = ","
    standardize: bool = True
    selection: str = "rank_aggregate"
    n_starts: int = 20
    max_iter: int = 500
    tol: float = 1e-6
    r2_floor: float = 0.05
    exclude_spurious: bool = True
    network_vars: list | None = None
    grid_size: int = 100
    ordinal_numeric: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "PipelineConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping")
        unknown = set(raw) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        for key in ("input_path", "classification_vars"):
            if key not in raw:
                raise ConfigError(f"missing required key {key!r}")
        try:
            cfg = cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if base_dir is not None:
            if not Path(cfg.input_path).is_absolute():
                cfg.input_path = str(base_dir / cfg.input_path)
            if not Path(cfg.output_dir).is_absolute():
                cfg.output_dir = str(base_dir / cfg.output_dir)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw, base_dir=path.parent)

    def validate(self):
        def names(key):
            v = getattr(self, key)
            if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
                raise ConfigError(f"{key} must be a list of column names")
            return v

        if not names("classification_vars"):
            raise ConfigError("classification_vars must not be empty")
        names("illustrative_quant")
        names("illustrative_qual")
        if self.network_vars is not None and len(names("network_vars")) < 2:
            raise ConfigError("network_vars needs at least two columns")
        try:
            lo, hi = (int(v) for v in self.k_range)
        except (TypeError, ValueError):
            raise ConfigError("k_range must be [lower, upper]") from None
        if lo < 1 or hi < lo:
            raise ConfigError("k_range needs 1 <= lower <= upper")
        self.k_range = (lo, hi)
        try:
            self.models = [Parameterization.from_number(m).number for m in self.models]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"models: {exc}") from None
        if not self.models:
            raise ConfigError("models must not be empty")
        if self.importance_responses != "posteriors" and not (
                isinstance(self.importance_responses, list) and self.importance_responses):
            raise ConfigError("importance_responses must be 'posteriors' or a list of columns")
        if self.predictor_groups is not None and not isinstance(self.predictor_groups, dict):
            raise ConfigError("predictor_groups must map group names to column lists")
        try:
            Strategy(self.selection)
        except ValueError:
            raise ConfigError(f"selection must be one of {[s.value for s in Strategy]}") from None
        if not (0 < self.alpha < 1):
            raise ConfigError("alpha must lie in (0, 1)")
        if int(self.bootstrap_B) < 0 or int(self.n_starts) < 1 or int(self.grid_size) < 2:
            raise ConfigError("bootstrap_B >= 0, n_starts >= 1 and grid_size >= 2 are required")
        if self.gamma < 0 or self.tol <= 0:
            raise ConfigError("gamma must be >= 0 and tol > 0")

    @property
    def nodes(self) -> list:
        return self.network_vars if self.network_vars is not None else \
            self.classification_vars + self.illustrative_quant


class PipelineError(ProfileNetError):
    def __init__(self, stage, cause):
        self.stage, self.cause = stage, cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


@dataclass
class PipelineReport:
    sweep: Any = None
    selected: tuple | None = None
    fit: Any = None
    labels: np.ndarray | None = None
    posteriors: np.ndarray | None = None
    class_sizes: list | None = None
    description: Any = None
    correlations: list | None = None
    importance: Any = None
    spurious: dict = field(default_factory=dict)
    networks: dict = field(default_factory=dict)
    centralities: dict = field(default_factory=dict)
    bootstraps: dict = field(default_factory=dict)
    comparisons: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)


class _Run:
    """Shared state of a (partial) pipeline run."""

    def __init__(self, cfg: PipelineConfig, n_jobs: int = 1):
        self.cfg = cfg
        self.n_jobs = n_jobs
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.report = PipelineReport()
        self.files: list[str] = []
        self.stage = "load"
        self.started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self._data = None

    # -- io
    def write(self, name, text):
        (self.out / name).write_text(text, encoding="utf-8", newline="")
        if name not in self.files:
            self.files.append(name)

    @property
    def data(self) -> Dataset:
        if self._data is None:
            ds = load_table(self.cfg.input_path, delimiter=self.cfg.delimiter)
            wanted = set(self.cfg.classification_vars + self.cfg.illustrative_quant
                         + self.cfg.illustrative_qual + self.cfg.nodes)
            missing = sorted(wanted - set(ds.names))
            if missing:
                raise DataError(f"columns not found in input: {missing}")
            for c in self.cfg.classification_vars + self.cfg.illustrative_quant + self.cfg.nodes:
                if ds.kind(c) is not ColumnKind.NUMERIC:
                    raise DataError(f"column {c!r} must be numeric")
            self._data = ds
        return self._data

    def read_intermediate(self):
        classes = self.out / "classes.csv"
        post = self.out / "posteriors.csv"
        if not classes.exists() or not post.exists():
            raise DataError("classes.csv / posteriors.csv not found; run fit-lpa first")
        with open(classes, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        labels = np.array([int(r["label"]) for r in rows])
        with open(post, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            tau = np.array([[float(v) for v in r[1:]] for r in reader])
        if len(labels) != self.data.n_rows or tau.shape[0] != self.data.n_rows:
            raise DataError("intermediate files do not match the input rows")
        self.report.labels = labels
        self.report.posteriors = tau
        self.report.class_sizes = np.bincount(labels - 1, minlength=tau.shape[1]).tolist()
        return labels, tau

    # -- stages
    def fit_lpa(self):
        self.stage = "fit-lpa"
        cfg = self.cfg
        ds = self.data
        if cfg.standardize:
            ds, _ = standardize(ds, cfg.classification_vars)
        X = ds.matrix(cfg.classification_vars)
        models = [Parameterization.from_number(m) for m in cfg.models]
        sweep = sweep_models(X, range(cfg.k_range[0], cfg.k_range[1] + 1), models,
                             n_starts=cfg.n_starts, max_iter=cfg.max_iter, tol=cfg.tol,
                             seed=cfg.seed, n_jobs=self.n_jobs)
        K, param = select_model(sweep, cfg.selection)
        fit = sweep.get(K, param).fit
        labels, sizes = classify(fit)
        r = self.report
        r.sweep, r.selected, r.fit, r.labels, r.class_sizes = sweep, (K, param), fit, labels, sizes.tolist()
        r.posteriors = fit.posteriors
        self.write("sweep.csv", sweep.to_csv())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row_id", "label", "max_posterior"])
        for i, (lab, p) in enumerate(zip(labels, fit.posteriors.max(axis=1))):
            w.writerow([i + 1, int(lab), format(p, ".17g")])
        self.write("classes.csv", buf.getvalue())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row_id"] + [f"profile_{k + 1}" for k in range(K)])
        for i, row in enumerate(fit.posteriors):
            w.writerow([i + 1] + [format(v, ".17g") for v in row])
        self.write("posteriors.csv", buf.getvalue())

    def describe(self):
        self.stage = "describe"
        cfg = self.cfg
        labels, tau = self.report.labels, self.report.posteriors
        desc = describe_profiles(self.data, labels, cfg.illustrative_quant + cfg.illustrative_qual, cfg.alpha)
        self.report.description = desc
        self.write("description.csv", desc.to_csv())
        numeric = list(dict.fromkeys(cfg.classification_vars + cfg.illustrative_quant))
        corr = membership_correlations(tau, self.data.matrix(numeric), numeric)
        self.report.correlations = corr
        self.write("correlations.csv", correlations_to_csv(corr))

    def _predictors(self):
        cfg = self.cfg
        ds = self.data
        recode = {}
        for col, levels in (cfg.ordinal_numeric or {}).items():
            values = ds[col]
            lookup = {lev: float(i) for i, lev in enumerate(levels)}
            if set(values) - set(lookup):
                raise DataError(f"ordinal_numeric levels for {col!r} do not cover the data")
            recode[col] = [lookup[v] for v in values]
        if recode:
            ds = ds.with_columns(recode, {c: ColumnKind.NUMERIC for c in recode})
        cats = [c.name for c in ds.columns if c.kind is ColumnKind.CATEGORICAL]
        groups_spec = cfg.predictor_groups or {
            v: [v] for v in cfg.classification_vars + cfg.illustrative_quant + cfg.illustrative_qual}
        used_cats = sorted({c for cols in groups_spec.values() for c in cols if c in cats})
        ds, ind = encode_categoricals(ds, used_cats)
        groups = []
        for name, cols in groups_spec.items():
            expanded = []
            for c in cols:
                expanded.extend(ind.get(c, [c]))
            groups.append(PredictorGroup(name, expanded))
        return ds, groups

    def _responses(self):
        cfg = self.cfg
        tau = self.report.posteriors
        if cfg.importance_responses == "posteriors":
            return {f"profile_{k + 1}": tau[:, k] for k in range(tau.shape[1])}
        return {c: self.data.matrix([c])[:, 0] for c in cfg.importance_responses}

    def importance(self):
        self.stage = "importance"
        ds, groups = self._predictors()
        mat = importance_matrix(self._responses(), groups, ds)
        self.report.importance = mat
        self.write("importance.csv", mat.to_csv())

    def _spurious(self):
        cfg = self.cfg
        if cfg.importance_responses != "posteriors":
            return {}
        if self.report.importance is not None:
            r2 = {k + 1: rep.full_r_squared for k, rep in enumerate(self.report.importance.reports)}
        else:
            ds, groups = self._predictors()
            r2 = {k + 1: SubsetR2(y, groups, ds).full
                  for k, y in enumerate(self._responses().values())}
        return {k: v < cfg.r2_floor for k, v in r2.items()}

    def networks(self):
        self.stage = "network"
        cfg = self.cfg
        labels = self.report.labels
        spurious = self._spurious()
        self.report.spurious = spurious
        nodes = cfg.nodes
        groups = split_by_group(self.data, labels)
        profiles = np.unique(labels)
        cent_buf = io.StringIO()
        cw = csv.writer(cent_buf, lineterminator="\n")
        cw.writerow(["profile", "node", "strength", "betweenness", "strength_z", "betweenness_z"])
        boot_buf = io.StringIO()
        bw = csv.writer(boot_buf, lineterminator="\n")
        bw.writerow(["profile", "node_a", "node_b", "estimate", "ci_low", "ci_high", "n_replicates", "n_failed"])
        skipped = {}
        for g, sub in zip(profiles, groups):
            g = int(g)
            if spurious.get(g) and cfg.exclude_spurious:
                skipped[g] = "possibly spurious (importance R2 below floor)"
                continue
            X = sub.matrix(nodes)
            try:
                net = estimate_network(X, cfg.gamma, cfg.grid_size, nodes)
            except TooFewRows as exc:
                skipped[g] = str(exc)
                continue
            self.report.networks[g] = net
            self.write(f"network_{g}.csv", net.edge_list_csv())
            self.write(f"network_{g}.dot", export_dot(net, name=f"profile_{g}"))
            cen = centrality(net)
            self.report.centralities[g] = cen
            sz, bz = cen.zscores()
            for i, node in enumerate(cen.node_names):
                cw.writerow([g, node] + [format(v, ".10g") for v in
                                         (cen.strength[i], cen.betweenness[i], sz[i], bz[i])])
            if cfg.bootstrap_B > 0:
                boot = bootstrap_network(X, int(cfg.bootstrap_B), cfg.gamma, child_seed(cfg.seed, 7, g),
                                         nodes, cfg.grid_size, n_jobs=self.n_jobs)
                self.report.bootstraps[g] = boot
                for a, b, pt, lo, hi in boot.edge_rows():
                    bw.writerow([g, a, b] + [format(v, ".10g") for v in (pt, lo, hi)]
                                + [boot.samples.shape[0], boot.n_failed])
        self.report.manifest["skipped_profiles"] = {str(k): v for k, v in skipped.items()}
        self.write("centrality.csv", cent_buf.getvalue())
        if cfg.bootstrap_B > 0:
            self.write("bootstrap.csv", boot_buf.getvalue())
        kept = sorted(self.report.networks)
        comp_buf = io.StringIO()
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                rows = compare_networks(self.report.networks[a], self.report.networks[b])
                self.report.comparisons[(a, b)] = rows
                body = comparison_to_csv(rows).splitlines(keepends=True)
                if comp_buf.tell() == 0:
                    comp_buf.write("profile_a,profile_b," + body[0])
                for line in body[1:]:
                    comp_buf.write(f"{a},{b},{line}")
        if kept:
            self.write("comparison.csv", comp_buf.getvalue())

    # -- reporting
    def report_json(self) -> dict:
        r = self.report
        doc: dict = {}
        if r.sweep is not None:
            doc["sweep"] = [
                {"model": e.param.number, "classes": e.K, "converged": e.converged, "error": e.error,
                 **({k: v for k, v in asdict(e.report).items() if k not in ("param", "K")}
                    if e.report else {})}
                for e in r.sweep]
            K, param = r.selected
            doc["selected"] = {"classes": K, "model": param.number}
        if r.class_sizes is not None:
            doc["class_sizes"] = [int(v) for v in r.class_sizes]
        if r.description is not None:
            doc["description"] = [asdict(row) | {"flag": row.flag} for row in r.description.rows]
        if r.correlations is not None:
            doc["correlations"] = [asdict(c) | {"stars": c.stars} for c in r.correlations]
        if r.importance is not None:
            doc["importance"] = {
                "predictors": r.importance.group_names,
                "responses": [{"response": rep.response, "r_squared": rep.full_r_squared,
                               "shares": rep.shares.tolist(), "pct_of_r2": rep.pct_of_r2.tolist()}
                              for rep in r.importance.reports],
                "mean_influence": r.importance.mean_influence.tolist()}
        if r.networks:
            doc["spurious_profiles"] = [k for k, v in sorted(r.spurious.items()) if v]
            doc["networks"] = {str(g): {"lambda": net.lam, "n": net.n, "nodes": net.node_names,
                                        "weights": net.weights.tolist()}
                               for g, net in sorted(r.networks.items())}
            doc["centrality"] = {str(g): {"strength": c.strength.tolist(), "betweenness": c.betweenness.tolist()}
                                 for g, c in sorted(r.centralities.items())}
        if r.bootstraps:
            doc["bootstrap"] = {str(g): {"B": b.B, "n_failed": b.n_failed,
                                         "significant_differences": [[list(e1), list(e2)]
                                                                     for e1, e2 in b.significant_pairs()]}
                                for g, b in sorted(r.bootstraps.items())}
        return doc

    def write_manifest(self, status="completed", error=None, extra_files=()):
        path = self.out / "manifest.json"
        previous = {}
        if path.exists():
            try:
                previous = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                previous = {}
        files = list(dict.fromkeys(previous.get("files", []) + self.files + list(extra_files)))
        files = [f for f in files if (self.out / f).exists()]
        manifest = {
            "status": status,
            "stage": self.stage,
            "error": error,
            "seed": self.cfg.seed,
            "config": asdict(self.cfg),
            "versions": {"profilenet": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": __import__("scipy").__version__,
                         "kernels": _kernels.BACKEND},
            "started": self.started,
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "dropped_rows": self._data.dropped if self._data is not None else None,
            "files": sorted(files),
        } | {k: v for k, v in self.report.manifest.items()}
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        self.report.manifest = manifest
        return manifest


def export_dot(net: Network, threshold: float = 0.0, name: str = "network") -> str:
    """Undirected DOT text: blue positive / red negative edges, width ``1 + 8|w|``."""
    lines = [f'graph "{name}" {{', "  node [shape=circle];"]
    for node in net.node_names:
        lines.append(f'  "{node}" [label="{node}"];')
    edges = []
    for i in range(net.d):
        for j in range(i + 1, net.d):
            w = float(net.weights[i, j])
            if w == 0.0 or abs(w) < threshold:
                continue
            a, b = sorted((net.node_names[i], net.node_names[j]))
            edges.append((a, b, w))
    for a, b, w in sorted(edges):
        color = "blue" if w > 0 else "red"
        lines.append(f'  "{a}" -- "{b}" [penwidth={1 + 8 * abs(w):.6g}, color="{color}", '
                     f'weight="{w:.6g}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


STAGES = {
    "fit-lpa": ("fit_lpa",),
    "describe": ("describe",),
    "importance": ("importance",),
    "network": ("networks",),
    "run-all": ("fit_lpa", "describe", "importance", "networks"),
}


def run_stages(cfg: PipelineConfig, command: str = "run-all", n_jobs: int = 1) -> PipelineReport:
    run = _Run(cfg, n_jobs)
    try:
        run.data  # noqa: B018  (load and validate columns up front)
        steps = STAGES[command]
        if steps[0] != "fit_lpa":
            run.stage = command
            run.read_intermediate()
        for step in steps:
            getattr(run, step)()
        if command == "run-all":
            run.write("report.json", json.dumps(run.report_json(), indent=2, sort_keys=True) + "\n")
    except ProfileNetError as exc:
        run.write_manifest(status="FAILED", error=f"[{run.stage}] {type(exc).__name__}: {exc}")
        raise PipelineError(run.stage, exc) from exc
    run.write_manifest()
    return run.report


def run_pipeline(config: PipelineConfig, n_jobs: int = 1) -> PipelineReport:
    """Run every stage and write all outputs plus ``manifest.json``."""
    return run_stages(config, "run-all", n_jobs)
