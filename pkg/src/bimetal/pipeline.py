"""Pipeline orchestration: ingest -> periodize -> fit -> detect -> report.

Every stage persists its outputs as human-readable artifacts (CSV for
tables, JSON for model objects) under one output directory, together with
a manifest recording the configuration, its hash, and the artifact
inventory. Identical configuration and input bytes reproduce identical
artifacts byte for byte; nothing time-dependent is written.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import changepoint as cpd
from . import data as dio
from . import som as sommod
from . import switching as msmod
from .errors import DataError, ValidationError
from .regression import LinearMean

REFERENCE_TRANSITION = (0.844298, 0.746643)


@dataclass
class RunConfig:
    """All pipeline parameters; the defaults reproduce the reference
    setup: 5x5 SOM grid, 6 macro-classes, two regimes (perceptron plus
    linear mean), and both change-point modes."""

    input: str | None = None
    outdir: str = "out"

    # ingestion
    max_gap: int = 4
    include_hpl: bool = True
    hpl_kind: str = "difference"
    spread_aggregation: str = "mean"

    # stage toggles
    run_som: bool = True
    run_ms: bool = True
    run_cpd: bool = True

    # SOM periodization
    som_rows: int = 5
    som_cols: int = 5
    som_epochs: int = 100
    som_lr_start: float = 0.5
    som_lr_end: float = 0.01
    som_radius_start: float | None = None
    som_radius_end: float = 0.5
    som_seed: int = 0
    n_classes: int = 6

    # switching model
    ms_regimes: int = 2
    ms_lag: int = 1
    ms_families: tuple = ("mlp", "linear")
    ms_hidden: int = 3
    ms_tol: float = 1e-6
    ms_max_iter: int = 200
    ms_restarts: int = 10
    ms_seed: int = 0

    # change-point detection
    cpd_k_max: int | None = None
    cpd_threshold: float = 0.75
    cpd_penalty: float | None = None
    cpd_min_seg_len_mean: int = 1
    cpd_min_seg_len_meanvar: int = 2

    # synthetic data generation
    sim_kind: str = "regimes"  # "regimes" | "steps"
    sim_T: int = 500
    sim_seed: int = 0
    sim_p: float = REFERENCE_TRANSITION[0]
    sim_q: float = REFERENCE_TRANSITION[1]
    sim_coefs: tuple = ((0.05, 0.6), (0.18, 0.3))
    sim_sigmas: tuple = (0.02, 0.08)
    sim_burn_in: int = 200
    sim_tau: tuple = (166, 333)
    sim_levels: tuple = (0.1, 0.5, 0.2)
    sim_stds: tuple = (0.03, 0.08, 0.03)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ms_families"] = list(self.ms_families)
        d["sim_coefs"] = [list(c) for c in self.sim_coefs]
        for key in ("sim_sigmas", "sim_tau", "sim_levels", "sim_stds"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        for key in ("ms_families", "sim_sigmas", "sim_tau", "sim_levels", "sim_stds"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        if "sim_coefs" in kwargs and kwargs["sim_coefs"] is not None:
            kwargs["sim_coefs"] = tuple(tuple(c) for c in kwargs["sim_coefs"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def merged(self, overrides: dict) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(d)

    def config_hash(self, input_bytes: bytes | None = None) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True).encode()
        h = hashlib.sha256(canonical)
        if input_bytes is not None:
            h.update(hashlib.sha256(input_bytes).digest())
        return h.hexdigest()


@dataclass
class AnalysisBundle:
    """Handles to every persisted artifact of one analysis run."""

    outdir: Path
    manifest: dict
    features: dio.FeatureSet | None = None
    spread: dio.SpreadSeries | None = None
    grid: sommod.SomGrid | None = None
    classification: sommod.MacroClassification | None = None
    em: msmod.EmResult | None = None
    segmentations: dict = field(default_factory=dict)

    @property
    def artifact_names(self) -> list[str]:
        return [a["name"] for a in self.manifest["artifacts"]]


def _ingest_objects(config: RunConfig):
    if config.input is None:
        raise DataError("no input file configured")
    path = Path(config.input)
    if not path.exists():
        raise DataError(f"input file {path} does not exist")
    weeks = dio.parse_dataset(str(path))
    if not weeks:
        raise DataError("no data rows")
    weeks, report = dio.impute_missing(weeks, max_gap=config.max_gap)
    features = dio.build_features(
        weeks, include_hpl=config.include_hpl, hpl_kind=config.hpl_kind
    )
    spread = dio.compute_spread(weeks, aggregation=config.spread_aggregation)
    return weeks, report, features, spread


def run_ingest(config: RunConfig) -> dict:
    """Parse, impute, and persist features + spread; returns a summary."""
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    weeks, report, features, spread = _ingest_objects(config)

    dio.write_features_csv(features, outdir / "features.csv")
    dio.write_json(dio.features_to_dict(features), outdir / "features.json")
    dio.write_spread_csv(spread, outdir / "spread.csv")
    dio.write_json(dio.spread_to_dict(spread), outdir / "spread.json")
    dio.write_json(
        dio.imputation_report_to_dict(report), outdir / "imputation_report.json"
    )
    return {
        "n_weeks": len(weeks),
        "n_imputed": len(report),
        "spread_length": len(spread),
        "paths": {
            "features": str(outdir / "features.csv"),
            "spread": str(outdir / "spread.csv"),
            "imputation_report": str(outdir / "imputation_report.json"),
        },
    }


def _artifact(name: str, path: Path, extra: str | None = None) -> dict:
    entry = {"name": name, "path": path.name}
    if extra is not None:
        entry["json"] = extra
    return entry


def run_analyze(config: RunConfig) -> AnalysisBundle:
    """Run the enabled stages and persist every artifact plus a manifest.

    A stage failure still writes the manifest (status "failed", with the
    stage name) so partial artifacts remain inspectable, then re-raises.
    """
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    input_bytes = Path(config.input).read_bytes() if config.input else None

    manifest: dict = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(input_bytes),
        "seeds": {"som": config.som_seed, "ms": config.ms_seed},
        "status": "ok",
        "failed_stage": None,
        "artifacts": [],
    }
    bundle = AnalysisBundle(outdir=outdir, manifest=manifest)
    stage = "ingest"
    try:
        weeks, report, features, spread = _ingest_objects(config)
        manifest["n_weeks"] = len(weeks)
        manifest["ingest"] = {
            "imputation_report": "imputation_report.json",
            "n_imputed": len(report),
        }
        dio.write_features_csv(features, outdir / "features.csv")
        dio.write_json(dio.features_to_dict(features), outdir / "features.json")
        dio.write_spread_csv(spread, outdir / "spread.csv")
        dio.write_json(dio.spread_to_dict(spread), outdir / "spread.json")
        dio.write_json(
            dio.imputation_report_to_dict(report), outdir / "imputation_report.json"
        )
        manifest["artifacts"].append(
            _artifact("features", outdir / "features.csv", "features.json")
        )
        manifest["artifacts"].append(
            _artifact("spread", outdir / "spread.csv", "spread.json")
        )
        bundle.features, bundle.spread = features, spread

        if config.run_som:
            stage = "som"
            schedule = sommod.SomSchedule(
                epochs=config.som_epochs,
                lr_start=config.som_lr_start,
                lr_end=config.som_lr_end,
                radius_start=config.som_radius_start,
                radius_end=config.som_radius_end,
            )
            grid = sommod.train_som(
                features, rows=config.som_rows, cols=config.som_cols,
                schedule=schedule, seed=config.som_seed,
            )
            classification = sommod.periodize(
                features, grid, sommod.hac_macro_classes(grid, k=config.n_classes)
            )
            dio.write_json(sommod.som_grid_to_dict(grid), outdir / "som_grid.json")
            dio.write_json(
                sommod.classification_to_dict(classification),
                outdir / "periodization.json",
            )
            manifest["artifacts"].append(_artifact("som_grid", outdir / "som_grid.json"))
            manifest["artifacts"].append(
                _artifact("periodization", outdir / "periodization.json")
            )
            bundle.grid, bundle.classification = grid, classification

        if config.run_ms:
            stage = "ms"
            spec = msmod.MsSpec(
                n_regimes=config.ms_regimes,
                lag=config.ms_lag,
                families=tuple(config.ms_families),
                hidden_units=config.ms_hidden,
            )
            em = msmod.em_fit(
                spec, spread.values, seed=config.ms_seed, tol=config.ms_tol,
                max_iter=config.ms_max_iter, n_restarts=config.ms_restarts,
            )
            dio.write_json(em.to_dict(), outdir / "ms_model.json")
            manifest["artifacts"].append(_artifact("ms_model", outdir / "ms_model.json"))
            bundle.em = em

        if config.run_cpd:
            stage = "cpd"
            labels = spread.labels
            for mode, min_len, name in (
                (cpd.SegMode.MEAN, config.cpd_min_seg_len_mean, "segmentation_mean"),
                (cpd.SegMode.MEAN_VAR, config.cpd_min_seg_len_meanvar,
                 "segmentation_meanvar"),
            ):
                seg = cpd.detect(
                    spread.values, mode, K_max=config.cpd_k_max,
                    threshold=config.cpd_threshold, penalty=config.cpd_penalty,
                    min_seg_len=min_len,
                )
                dio.write_json(seg.to_dict(labels=labels), outdir / f"{name}.json")
                manifest["artifacts"].append(_artifact(name, outdir / f"{name}.json"))
                bundle.segmentations[mode.value] = seg
    except Exception:
        manifest["status"] = "failed"
        manifest["failed_stage"] = stage
        dio.write_json(manifest, outdir / "manifest.json")
        raise

    dio.write_json(manifest, outdir / "manifest.json")
    return bundle


def load_bundle(outdir) -> AnalysisBundle:
    """Reload a persisted analysis from its manifest."""
    outdir = Path(outdir)
    manifest_path = outdir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest in {outdir}: run analyze first")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    bundle = AnalysisBundle(outdir=outdir, manifest=manifest)
    by_name = {a["name"]: a for a in manifest["artifacts"]}

    def _load_json(name):
        entry = by_name.get(name)
        if entry is None:
            return None
        path = outdir / entry.get("json", entry["path"])
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    d = _load_json("features")
    if d is not None:
        bundle.features = dio.features_from_dict(d)
    d = _load_json("spread")
    if d is not None:
        bundle.spread = dio.spread_from_dict(d)
    d = _load_json("som_grid")
    if d is not None:
        bundle.grid = sommod.som_grid_from_dict(d)
    d = _load_json("periodization")
    if d is not None:
        bundle.classification = sommod.classification_from_dict(d)
    d = _load_json("ms_model")
    if d is not None:
        bundle.em = msmod.EmResult(
            params=msmod.MsParams.from_dict(d["params"]),
            probabilities=msmod.RegimeProbabilities.from_dict(d["probabilities"]),
            trace=tuple(d["trace"]),
            converged=d["converged"],
            n_iter=d["n_iter"],
            restart=d["restart"],
            restart_logliks=tuple(d["restart_logliks"]),
            spec=None if d["spec"] is None else msmod.MsSpec.from_dict(d["spec"]),
            seed=d["seed"],
        )
    for name in ("segmentation_mean", "segmentation_meanvar"):
        d = _load_json(name)
        if d is not None:
            seg = cpd.segmentation_from_dict(d)
            bundle.segmentations[seg.mode.value] = seg
    return bundle


def _require(bundle: AnalysisBundle, attr, artifact: str, stage: str):
    if getattr(bundle, attr) is None:
        raise DataError(
            f"missing artifact {artifact!r}: run the {stage} stage of analyze first"
        )


def run_report(bundle: AnalysisBundle) -> dict:
    """Emit the three report files from a completed analysis.

    class_table.csv mirrors the regime/volatility cross-tabulation
    (per class: size, share of weeks ruled by regime 1, spread volatility);
    class_means.csv holds the per-class raw-variable means; and
    aligned_series.csv lines up, week by week, the spread, the smoothed
    probability of regime 1, and indicator columns for the change-points
    of both modes, ready for external plotting.
    """
    _require(bundle, "spread", "spread", "ingest")
    _require(bundle, "classification", "periodization", "som")
    _require(bundle, "em", "ms_model", "ms")
    for name in ("mean", "meanvar"):
        if name not in bundle.segmentations:
            raise DataError(
                f"missing artifact 'segmentation_{name}': run the cpd stage "
                "of analyze first"
            )

    outdir = bundle.outdir
    spread = bundle.spread
    classification = bundle.classification
    probs = bundle.em.probabilities

    rows = msmod.cross_tabulate(probs, classification, spread)
    with open(outdir / "class_table.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class", "n_obs", "pct_regime1", "spread_std"])
        for r in rows:
            writer.writerow(
                [r.class_id, r.n_obs, f"{r.pct_regime1:.3f}", f"{r.spread_std:.3f}"]
            )

    means = classification.class_means
    var_names = list(next(iter(means.values())).keys())
    with open(outdir / "class_means.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class", "n_weeks"] + var_names)
        for cls in sorted(means):
            writer.writerow(
                [cls, classification.class_counts[cls]]
                + [repr(means[cls][v]) for v in var_names]
            )

    labels = spread.labels
    T = len(spread)
    cp_mean = np.zeros(T, dtype=int)
    cp_mean[list(bundle.segmentations["mean"].tau)] = 1
    cp_mv = np.zeros(T, dtype=int)
    cp_mv[list(bundle.segmentations["meanvar"].tau)] = 1
    offset = probs.offset
    with open(outdir / "aligned_series.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["week", "spread", "p_regime1", "cp_mean", "cp_meanvar"])
        for t in range(T):
            p1 = "" if t < offset else repr(float(probs.smoothed[t - offset, 0]))
            writer.writerow(
                [labels[t], repr(float(spread.values[t])), p1,
                 int(cp_mean[t]), int(cp_mv[t])]
            )

    return {
        "class_table": str(outdir / "class_table.csv"),
        "class_means": str(outdir / "class_means.csv"),
        "aligned_series": str(outdir / "aligned_series.csv"),
    }


# ---------------------------------------------------------------------------
# Synthetic dataset generation
# ---------------------------------------------------------------------------

def _weeks_calendar(n, start_year=1821):
    year, week = start_year, 1
    out = []
    for _ in range(n):
        out.append((year, week))
        week += 1
        if week > 52:
            year, week = year + 1, 1
    return out


def _spread_to_weeks(spread_values, rng, base=15.0):
    """Quotation rows whose per-day spread reproduces ``spread_values``.

    A common per-day level offset is added to all three gold-silver prices;
    the spread (max minus min) is invariant to it, and it gives every
    column the variance the feature standardization needs.
    """
    calendar = _weeks_calendar(len(spread_values))
    weeks = []
    for (year, wk), s in zip(calendar, spread_values):
        s = float(s)
        days = []
        for _ in range(2):
            level = base + 0.05 * rng.standard_normal()
            days.append((level, level + s / 2.0, level + s))
        lpv = 25.0 + 0.05 * rng.standard_normal()
        hlv = 13.0 + 0.03 * rng.standard_normal()
        phv = 1.9 + 0.01 * rng.standard_normal()
        weeks.append(
            dio.QuotationWeek(
                year=year, week=wk,
                values={
                    "poa": (days[0][0], days[1][0]),
                    "lgs": (days[0][1], days[1][1]),
                    "hoa": (days[0][2], days[1][2]),
                    "lpv": (lpv, lpv),
                    "hlv": (hlv, hlv),
                    "phv": (phv, phv),
                },
            )
        )
    return weeks


def run_simulate(config: RunConfig) -> dict:
    """Write a synthetic dataset in the ingestion format plus a ground-truth
    sidecar (true regime states or true change-point indices)."""
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.sim_seed + 1)  # exchange-rate noise only

    if config.sim_kind == "regimes":
        params = msmod.MsParams(
            transition=msmod.transition_from_pq(config.sim_p, config.sim_q),
            means=tuple(LinearMean(np.array(c)) for c in config.sim_coefs),
            sigmas=np.array(config.sim_sigmas),
        )
        y, states = msmod.simulate(
            params, T=config.sim_T, seed=config.sim_seed,
            burn_in=config.sim_burn_in,
        )
        shift = float(max(0.0, -(y.min()) + 0.01)) if y.min() < 0.01 else 0.0
        y = y + shift
        # a level shift c maps each intercept a0 to a0 + c(1 - sum(a_1..a_l))
        shifted = [
            [c[0] + shift * (1.0 - sum(c[1:]))] + list(c[1:])
            for c in config.sim_coefs
        ]
        truth = {
            "kind": "regimes",
            "seed": config.sim_seed,
            "shift": shift,
            "transition": params.transition.tolist(),
            "coefs": shifted,
            "sigmas": list(config.sim_sigmas),
            "true_states": states.tolist(),
        }
    elif config.sim_kind == "steps":
        tau = tuple(config.sim_tau)
        bounds = (0,) + tau + (config.sim_T,)
        if list(bounds) != sorted(set(bounds)):
            raise ValidationError(f"sim_tau {tau} not increasing within 0..{config.sim_T}")
        if len(config.sim_levels) != len(tau) + 1 or len(config.sim_stds) != len(tau) + 1:
            raise ValidationError(
                "sim_levels and sim_stds must have one entry per segment"
            )
        gen = np.random.default_rng(config.sim_seed)
        parts = []
        for (a, b), level, std in zip(
            zip(bounds, bounds[1:]), config.sim_levels, config.sim_stds
        ):
            parts.append(level + std * gen.standard_normal(b - a))
        y = np.concatenate(parts)
        y = np.maximum(y, 0.0)
        truth = {
            "kind": "steps",
            "seed": config.sim_seed,
            "true_tau": list(tau),
            "levels": list(config.sim_levels),
            "stds": list(config.sim_stds),
        }
    else:
        raise ValidationError(f"unknown sim_kind {config.sim_kind!r}")

    weeks = _spread_to_weeks(y, rng)
    dataset_path = outdir / "dataset.csv"
    dio.write_dataset(weeks, str(dataset_path))
    dio.write_json(truth, outdir / "dataset_truth.json")
    return {
        "rows": len(weeks),
        "dataset": str(dataset_path),
        "truth": str(outdir / "dataset_truth.json"),
    }
