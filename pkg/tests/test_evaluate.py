import numpy as np
import pytest

from shaperecon.camera import Intrinsics
from shaperecon.dataset import ParamVector, default_ranges, sample_parameters
from shaperecon.evaluate import (
    BenchmarkConfig,
    EvalReport,
    RunResult,
    aggregate_reports,
    anova_oneway,
    compare_conditions,
    cross_validate,
    mae_metric,
    report_csv,
    report_text,
    summary_csv,
    split_real_indices,
)
from shaperecon.geometry import PhantomConfig, make_phantom
from shaperecon.regressor import RegressorHyper, loss_reconstruction
from shaperecon.render import PerturbConfig
from shaperecon.vae import VaeHyper

MODEL = make_phantom(PhantomConfig())
RANGES = default_ranges()


def tiny_config(**overrides):
    defaults = dict(
        phantom=PhantomConfig(),
        intrinsics=Intrinsics(width=24, height=16),
        n_sim=24,
        n_real=10,
        vae=VaeHyper(batch_size=8, epochs=3),
        reg=RegressorHyper(batch_size=8, epochs=3, dropout=0.2),
    )
    defaults.update(overrides)
    return BenchmarkConfig(**defaults)


def test_mae_metric_is_the_alignment_loss():
    rng = np.random.default_rng(0)
    ps = sample_parameters(RANGES, 200, seed=4)
    for a, b in zip(ps[:100], ps[100:]):
        assert mae_metric(a, b, MODEL) == loss_reconstruction(a, b, MODEL)


def test_mae_metric_zero_for_identical_params():
    p = sample_parameters(RANGES, 1, seed=5)[0]
    assert mae_metric(p, p, MODEL) == 0.0


def test_anova_identical_groups():
    f, p = anova_oneway([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    assert f == 0.0 and p == 1.0


def test_anova_hand_computed_example():
    f, p = anova_oneway([[1, 2, 3], [2, 3, 4], [3, 4, 5]])
    assert abs(f - 3.0) < 1e-12
    assert 0.0 < p < 1.0


def test_anova_p_decreases_as_groups_separate():
    rng = np.random.default_rng(1)
    base = rng.normal(size=12)
    last_p = 1.1
    for delta in (0.0, 0.5, 1.0, 2.0, 4.0):
        groups = [base, base + delta, base + 2 * delta]
        f, p = anova_oneway(groups)
        if delta == 0.0:
            assert f == 0.0
        assert p <= last_p + 1e-12
        last_p = p


def test_anova_rejects_degenerate_input():
    with pytest.raises(ValueError):
        anova_oneway([[1.0, 2.0]])
    with pytest.raises(ValueError):
        anova_oneway([[1.0], [2.0, 3.0]])
    with pytest.raises(ValueError):
        anova_oneway([[1.0, 1.0], [2.0, 2.0]])


def test_split_is_deterministic_and_disjoint():
    train1, test1 = split_real_indices(128, 0.2, seed=3)
    train2, test2 = split_real_indices(128, 0.2, seed=3)
    assert train1 == train2 and test1 == test2
    assert len(test1) == 26
    assert sorted(train1 + test1) == list(range(128))
    _, test_other = split_real_indices(128, 0.2, seed=4)
    assert test1 != test_other


def test_compare_conditions_structure_and_reproducibility():
    cfg = tiny_config()
    report = compare_conditions(cfg, seeds=[0, 1])
    assert len(report.runs) == 6  # 3 conditions x 2 seeds
    for run in report.runs:
        assert len(run.maes) == 2  # 20% of 10 real samples
    stats = report.condition_stats()
    assert set(stats) == {"real_only", "virtual", "proposed"}
    again = compare_conditions(cfg, seeds=[0, 1])
    assert report_csv(report) == report_csv(again)
    assert summary_csv(report) == summary_csv(again)


def test_report_regeneration_matches_summary():
    report = compare_conditions(tiny_config(), seeds=[0])
    text = report_csv(report)
    by_condition = {}
    for line in text.strip().splitlines()[1:]:
        cond, seed, idx, mae = line.split(",")
        by_condition.setdefault(cond, []).append(float(mae))
    for cond, (mean, std, n) in report.condition_stats().items():
        vals = np.array(by_condition[cond])
        assert vals.size == n
        assert mean == float(vals.mean())
        assert abs(std - float(vals.std(ddof=1) if n > 1 else 0.0)) < 1e-15


def test_run_result_stats_consistent():
    run = RunResult("virtual", 0, (1.0, 2.0, 4.0))
    assert abs(run.mean - 7.0 / 3.0) < 1e-12
    assert abs(run.std - float(np.std([1, 2, 4], ddof=1))) < 1e-12


def test_cross_validate_structure():
    cfg = tiny_config()
    phantoms = [PhantomConfig(seed=0), PhantomConfig(seed=1), PhantomConfig(seed=2)]
    reports, agg = cross_validate(phantoms, cfg, seeds=[0])
    assert len(reports) == 3
    for c, (mean, std) in agg.items():
        means = [r.condition_stats()[c][0] for r in reports]
        assert abs(mean - float(np.mean(means))) < 1e-12  # equal-weight mean
    with pytest.raises(ValueError):
        cross_validate([PhantomConfig()], cfg, seeds=[0])


def test_report_text_contains_key_fields():
    report = compare_conditions(tiny_config(), seeds=[0])
    text = report_text(report, timestamp=False)
    assert "improvement of proposed over virtual" in text
    assert "ANOVA" in text
    assert "translation seed 0" in text
    assert "generated_at" not in text
