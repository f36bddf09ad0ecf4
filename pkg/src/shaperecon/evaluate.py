"""Evaluation harness: the vertex-error metric, the three-condition
benchmark (train on real images only, on simulated contours, or on
translator outputs), significance testing, and cross-validation over
phantom variants.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats as _scipy_stats

from .camera import Intrinsics
from .dataset import (
    Dataset,
    ParamRanges,
    ParamVector,
    build_dataset,
    default_ranges,
    real_subset,
)
from .geometry import PhantomConfig, ShapeModel, make_phantom
from .regressor import (
    RegressorHyper,
    RegressorModel,
    loss_reconstruction,
    predict_params,
    train_regressor,
)
from .render import PerturbConfig
from .vae import VaeHyper, VaeModel, train_translator, translate

__all__ = [
    "CONDITIONS",
    "BenchmarkConfig",
    "RunResult",
    "TranslationStats",
    "EvalReport",
    "mae_metric",
    "anova_oneway",
    "evaluate_regressor",
    "split_real_indices",
    "compare_conditions",
    "cross_validate",
    "aggregate_reports",
    "report_csv",
    "summary_csv",
    "report_text",
]

CONDITIONS = ("real_only", "virtual", "proposed")


def mae_metric(pred: ParamVector, true: ParamVector, model: ShapeModel) -> float:
    """Mean vertex error in the camera frame; shares the alignment-loss code."""
    return loss_reconstruction(pred, true, model)


def anova_oneway(groups) -> tuple[float, float]:
    """One-way ANOVA F statistic and p value over 2+ groups of scalars."""
    gs = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(gs) < 2:
        raise ValueError("need at least two groups")
    if any(g.ndim != 1 or g.size < 2 for g in gs):
        raise ValueError("each group needs at least two samples")
    n_total = sum(g.size for g in gs)
    grand = np.concatenate(gs).mean()
    ss_between = sum(g.size * (g.mean() - grand) ** 2 for g in gs)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in gs)
    df_between = len(gs) - 1
    df_within = n_total - len(gs)
    if ss_within == 0.0:
        raise ValueError("zero within-group variance, F undefined")
    f = (ss_between / df_between) / (ss_within / df_within)
    p = float(_scipy_stats.f.sf(f, df_between, df_within))
    return float(f), p


@dataclass(frozen=True)
class BenchmarkConfig:
    phantom: PhantomConfig = PhantomConfig()
    ranges: ParamRanges = field(default_factory=default_ranges)
    intrinsics: Intrinsics = Intrinsics()
    perturb: PerturbConfig = PerturbConfig()
    n_sim: int = 2000
    n_real: int = 128
    test_fraction: float = 0.2
    vae: VaeHyper = VaeHyper(epochs=100)
    reg: RegressorHyper = RegressorHyper(epochs=100)


@dataclass(frozen=True)
class RunResult:
    condition: str
    seed: int
    maes: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.maes))

    @property
    def std(self) -> float:
        return float(np.std(self.maes, ddof=1)) if len(self.maes) > 1 else 0.0


@dataclass(frozen=True)
class TranslationStats:
    """Domain-gap MSE numbers on the held-out pairs of one seed."""

    seed: int
    mse_raw: float  # pseudo-real vs paired simulated
    mse_translated: float  # translated pseudo-real vs paired simulated
    mse_both_translated: float  # translated pseudo-real vs translated simulated


@dataclass
class EvalReport:
    runs: list[RunResult]
    translation: list[TranslationStats]
    seeds: tuple[int, ...]
    improvement_pct: float
    anova_f: float
    anova_p: float
    config_digest: str
    artifacts: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)

    def condition_maes(self, condition: str) -> np.ndarray:
        vals = []
        for run in self.runs:
            if run.condition == condition:
                vals.extend(run.maes)
        return np.array(vals)

    def condition_stats(self) -> dict[str, tuple[float, float, int]]:
        out = {}
        for c in CONDITIONS:
            maes = self.condition_maes(c)
            if maes.size:
                out[c] = (float(maes.mean()),
                          float(maes.std(ddof=1)) if maes.size > 1 else 0.0,
                          int(maes.size))
        return out


def _digest_config(cfg: BenchmarkConfig, seeds) -> str:
    h = hashlib.sha256(repr((cfg, tuple(seeds))).encode())
    return h.hexdigest()[:16]


def split_real_indices(n_real: int, fraction: float, seed: int):
    """Deterministic train/test split of the real-sample indices."""
    n_test = max(1, int(round(n_real * fraction)))
    if n_test >= n_real:
        raise ValueError("test split swallows every real sample")
    perm = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 9)))) \
        .permutation(n_real)
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    return train.tolist(), test.tolist()


def evaluate_regressor(reg: RegressorModel, samples, model: ShapeModel,
                       r: ParamRanges, translator: VaeModel | None = None):
    """Per-sample MAE of a regressor on pseudo-real samples.

    When a translator is given, test inputs pass through it first.
    """
    maes = []
    for s in samples:
        img = s.real
        if translator is not None:
            img = translate(translator, img)
        pred = predict_params(reg, img, r)
        maes.append(mae_metric(pred, s.params, model))
    return maes


def _translation_stats(translator, test_samples, seed) -> TranslationStats:
    raw, trans, both = [], [], []
    for s in test_samples:
        real, sim = s.real, s.sim
        f_real = translate(translator, real)
        f_sim = translate(translator, sim)
        raw.append(np.mean((real - sim) ** 2))
        trans.append(np.mean((f_real - sim) ** 2))
        both.append(np.mean((f_real - f_sim) ** 2))
    return TranslationStats(seed, float(np.mean(raw)), float(np.mean(trans)),
                            float(np.mean(both)))


def run_single_seed(cfg: BenchmarkConfig, seed: int, keep_models: bool = False):
    """Dataset, translator, and the three regressors for one seed."""
    model = make_phantom(cfg.phantom)
    ds = build_dataset(model, cfg.ranges, cfg.n_sim, cfg.n_real, cfg.perturb,
                       cfg.intrinsics, seed, phantom=cfg.phantom)
    train_idx, test_idx = split_real_indices(cfg.n_real, cfg.test_fraction, seed)
    train_ds = real_subset(ds, train_idx)
    test_samples = [ds.real_samples()[i] for i in test_idx]

    translator, vae_hist = train_translator(train_ds, replace(cfg.vae, seed=seed))
    tstats = _translation_stats(translator, test_samples, seed)

    runs = []
    models = {}
    histories = {}
    for condition in CONDITIONS:
        reg, hist = train_regressor(
            train_ds, model, cfg.ranges, condition,
            translator=translator if condition == "proposed" else None,
            hyper=replace(cfg.reg, seed=seed))
        maes = evaluate_regressor(
            reg, test_samples, model, cfg.ranges,
            translator=translator if condition == "proposed" else None)
        runs.append(RunResult(condition, seed, tuple(maes)))
        histories[condition] = hist
        if keep_models:
            models[condition] = reg
    out = {"runs": runs, "translation": tstats, "vae_history": vae_hist,
           "reg_histories": histories}
    if keep_models:
        out["translator"] = translator
        out["regressors"] = models
        out["dataset"] = ds
        out["model"] = model
        out["test_indices"] = test_idx
    return out


def compare_conditions(cfg: BenchmarkConfig, seeds, keep_models: bool = False) -> EvalReport:
    """Train and evaluate all three conditions for every seed."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    runs, translation = [], []
    models = {}
    for seed in seeds:
        try:
            result = run_single_seed(cfg, seed, keep_models=keep_models)
        except Exception as e:
            raise RuntimeError(f"benchmark seed {seed} failed: {e}") from e
        runs.extend(result["runs"])
        translation.append(result["translation"])
        if keep_models:
            models[seed] = result

    report = EvalReport(runs, translation, tuple(seeds), 0.0, 0.0, 1.0,
                        _digest_config(cfg, seeds), models=models)
    stats = report.condition_stats()
    v, p = stats["virtual"][0], stats["proposed"][0]
    report.improvement_pct = (v - p) / v * 100.0 if v > 0 else 0.0
    groups = [report.condition_maes(c) for c in CONDITIONS]
    report.anova_f, report.anova_p = anova_oneway(groups)
    return report


def cross_validate(phantoms, cfg: BenchmarkConfig, seeds):
    """compare_conditions per phantom variant plus an aggregate summary."""
    phantoms = list(phantoms)
    if len(phantoms) < 2:
        raise ValueError("cross-validation needs at least two phantom variants")
    reports = [compare_conditions(replace(cfg, phantom=ph), seeds) for ph in phantoms]
    return reports, aggregate_reports(reports)


def aggregate_reports(reports) -> dict[str, tuple[float, float]]:
    """Equal-weight mean (and std across reports) of per-condition means."""
    out = {}
    for c in CONDITIONS:
        means = [r.condition_stats()[c][0] for r in reports]
        out[c] = (float(np.mean(means)),
                  float(np.std(means, ddof=1)) if len(means) > 1 else 0.0)
    return out


# --- report files ------------------------------------------------------------

def report_csv(report: EvalReport) -> str:
    rows = ["condition,seed,sample,mae_mm"]
    for run in report.runs:
        for i, m in enumerate(run.maes):
            rows.append(f"{run.condition},{run.seed},{i},{m!r}")
    return "\n".join(rows) + "\n"


def summary_csv(report: EvalReport) -> str:
    rows = ["condition,mean_mm,std_mm,n"]
    for c, (mean, std, n) in report.condition_stats().items():
        rows.append(f"{c},{mean!r},{std!r},{n}")
    rows.append(f"improvement_pct,{report.improvement_pct!r},,")
    rows.append(f"anova_f,{report.anova_f!r},,")
    rows.append(f"anova_p,{report.anova_p!r},,")
    return "\n".join(rows) + "\n"


def report_text(report: EvalReport, timestamp: bool = True) -> str:
    lines = ["three-condition benchmark report",
             f"config_digest: {report.config_digest}",
             f"seeds: {','.join(str(s) for s in report.seeds)}"]
    if timestamp:
        lines.append("generated_at: " + time.strftime("%Y-%m-%d %H:%M:%S"))
    for path, digest in sorted(report.artifacts.items()):
        lines.append(f"artifact: {path} sha256:{digest}")
    lines.append("")
    lines.append(f"{'condition':<12} {'mean mm':>10} {'std mm':>10} {'n':>6}")
    for c, (mean, std, n) in report.condition_stats().items():
        lines.append(f"{c:<12} {mean:>10.2f} {std:>10.2f} {n:>6}")
    lines.append("")
    lines.append(f"improvement of proposed over virtual: {report.improvement_pct:.1f}%")
    lines.append(f"one-way ANOVA: F = {report.anova_f:.3f}, p = {report.anova_p:.3g}")
    for t in report.translation:
        lines.append(f"translation seed {t.seed}: raw {t.mse_raw:.5f}, "
                     f"translated {t.mse_translated:.5f}, both {t.mse_both_translated:.5f}")
    return "\n".join(lines) + "\n"
