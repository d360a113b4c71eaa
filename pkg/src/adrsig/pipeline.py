"""Batch orchestration: run algorithms over drugs, write signals and metrics."""
from __future__ import annotations

import csv
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import mutara, srs, tpd
from .errors import ConfigError, DatasetError
from .evaluation import (
    ConfusionCounts, GroundTruth, average_precision, label, natural_threshold_confusion,
    partial_auc, pooled_roc, precision_at_k, rare_only_ap,
)
from .ranking import ALGORITHMS, RankedSignalList
from .store import EventDatabase, load_clean

log = logging.getLogger(__name__)

AUC_LIMITS = (1.0, 0.3, 0.1)
PRECISION_CUTOFF = 10


@dataclass
class RunConfig:
    dataset_dir: Path
    out_dir: Path
    drugs: list[str] = field(default_factory=list)
    algorithms: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    truth: Path | None = None
    rng_seed: int = 0
    jobs: int = 1
    mutara_tr: int = 60
    tpd_variant: int = 1
    quantile_tol: float = tpd.QUANTILE_TOL


def resolve_algorithms(names, mutara_tr: int = 60, tpd_variant: int = 1) -> list[str]:
    """Expand ``MUTARA``/``HUNT``/``TPD``/``ALL`` and validate names."""
    out: list[str] = []
    for raw in names:
        name = raw.strip().upper()
        if name == "ALL":
            expanded = list(ALGORITHMS)
        elif name in ("MUTARA", "HUNT"):
            expanded = [f"{name}{mutara_tr}"]
        elif name == "TPD":
            expanded = [f"TPD{tpd_variant}"]
        elif name == "ROR":
            expanded = ["ROR05"]
        else:
            expanded = [name]
        for n in expanded:
            if n not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {raw!r}; choose from {', '.join(ALGORITHMS)}")
            if n not in out:
                out.append(n)
    return out


def run_algorithm(db: EventDatabase, drug_code: str, algorithm: str, rng_seed: int = 0,
                  quantile_tol: float = tpd.QUANTILE_TOL) -> RankedSignalList:
    if algorithm == "ROR05":
        return srs.rank_by_ror05(db, drug_code)
    if algorithm.startswith("MUTARA"):
        return mutara.mutara_rank(db, drug_code, mutara.preset(mutara.PRESETS[algorithm], rng_seed), algorithm)
    if algorithm.startswith("HUNT"):
        return mutara.hunt_rank(db, drug_code, mutara.preset(mutara.PRESETS[algorithm], rng_seed), algorithm)
    if algorithm in ("TPD1", "TPD2"):
        return tpd.tpd_rank(db, drug_code, algorithm.lower(), quantile_tol)
    raise ConfigError(f"unknown algorithm {algorithm!r}")


def _g(x):
    """Round floats to 6 significant digits for output."""
    if isinstance(x, float):
        return float(f"{x:.6g}")
    if isinstance(x, dict):
        return {k: _g(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_g(v) for v in x]
    return x


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


def write_signals(ranking: RankedSignalList, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["drug_code", "event_code", "algorithm", "score", "rank", "signalled"])
        for e in ranking:
            writer.writerow([ranking.drug_code, e.event_code, ranking.algorithm, f"{e.score:.6g}", e.rank, int(e.signalled)])


def evaluate(rankings: dict[str, dict[str, RankedSignalList]], errors: dict, truth: GroundTruth | None) -> dict:
    """Metrics document: per-drug AP, rare-only AP, P(10); pooled AUCs and
    natural-threshold confusion per algorithm."""
    doc: dict = {}
    for algorithm, per_drug in rankings.items():
        drugs: dict = {}
        labeled_all = []
        confusion = ConfusionCounts(0, 0, 0, 0)
        for drug, ranking in per_drug.items():
            entry: dict = {"candidates": len(ranking), "signals": ranking.n_signalled}
            if truth is not None:
                labeled = label(ranking, truth, drug)
                labeled_all.append(labeled)
                confusion = confusion + natural_threshold_confusion(labeled, [e.signalled for e in ranking])
                entry["known_adrs"] = int(labeled.y.sum())
                entry["ap"] = average_precision(labeled) if len(labeled) else None
                entry["rare_ap"] = rare_only_ap(labeled, truth, drug) if len(labeled) else None
                entry["p10"] = precision_at_k(labeled, PRECISION_CUTOFF) if len(labeled) >= PRECISION_CUTOFF else None
            drugs[drug] = entry
        for drug, message in errors.get(algorithm, {}).items():
            drugs[drug] = {"error": message}
        block: dict = {"drugs": drugs, "signals": sum(r.n_signalled for r in per_drug.values())}
        if truth is not None:
            block["natural_threshold"] = confusion.as_dict()
            try:
                curve = pooled_roc(labeled_all)
            except ValueError as exc:
                block["auc"] = None
                block["roc_error"] = str(exc)
            else:
                block["auc"] = {f"{limit:g}": partial_auc(curve, limit) for limit in AUC_LIMITS}
                block["roc"] = [list(p) for p in curve.points]
        doc[algorithm] = block
    return doc


def run(config: RunConfig) -> int:
    """Execute a run; returns the process exit status (0 ok, 1 partial failure)."""
    if not config.drugs:
        raise ConfigError("drug list is empty")
    algorithms = resolve_algorithms(config.algorithms, config.mutara_tr, config.tpd_variant)
    if config.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    dataset = Path(config.dataset_dir)
    if not dataset.is_dir():
        raise DatasetError(f"dataset directory not found: {dataset}")
    truth = GroundTruth.load(config.truth) if config.truth else None
    db = load_clean(dataset)

    tasks = [(drug, algorithm) for drug in config.drugs for algorithm in algorithms]

    def work(task):
        drug, algorithm = task
        try:
            return run_algorithm(db, drug, algorithm, config.rng_seed, config.quantile_tol), None
        except Exception as exc:  # recorded per task; the run continues
            log.exception("%s failed on %s", algorithm, drug)
            return None, f"{type(exc).__name__}: {exc}"

    if config.jobs == 1:
        results = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(work, tasks))

    out = Path(config.out_dir)
    signals_dir = out / "signals"
    signals_dir.mkdir(parents=True, exist_ok=True)
    rankings: dict[str, dict[str, RankedSignalList]] = {a: {} for a in algorithms}
    errors: dict[str, dict[str, str]] = {}
    for (drug, algorithm), (ranking, error) in zip(tasks, results):
        if error is not None:
            errors.setdefault(algorithm, {})[drug] = error
            continue
        rankings[algorithm][drug] = ranking
        write_signals(ranking, signals_dir / f"{_safe(drug)}__{algorithm}.csv")

    # out_dir and jobs do not affect results; leaving them out keeps reruns byte-identical
    settings = asdict(config)
    del settings["out_dir"], settings["jobs"]
    settings.update(dataset_dir=str(config.dataset_dir),
                    truth=str(config.truth) if config.truth else None, algorithms=algorithms)
    metrics = {
        "settings": settings,
        "rejected_rows": db.n_rejected,
        "algorithms": evaluate(rankings, errors, truth),
        "errors": [{"drug_code": d, "algorithm": a, "message": m} for a, by in errors.items() for d, m in by.items()],
    }
    (out / "metrics.json").write_text(json.dumps(_g(metrics), indent=2) + "\n", encoding="utf-8")
    return 1 if errors else 0
