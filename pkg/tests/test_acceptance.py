'''
Full-corpus runs on the seeded synthetic corpus (10 devices, 600 s, 50 000
packets per attack). Minutes each; run with `pytest -m slow`.
'''
from dataclasses import replace

import numpy as np
import pytest

from pcapbd.defense import TAG_BENIGN, TAG_TRIGGERED, analyze, select_benign_predicted
from pcapbd.exp_harness import (BENIGN, ExperimentConfig, assemble_training_set, clean_corpus, derive_seeds,
                                frame_matrix, poison_capture, poisoned_features, reports_to_frame, run_pipeline,
                                run_sweep, search_label_flip, select_attacks, train_on_frame)
from pcapbd.flow_features import extract
from pcapbd.stealth_auditor import audit_delta, injected_indices
from pcapbd.synthetic import generate_attack_trace, generate_synthetic_corpus
from pcapbd.trigger_injector import TriggerConfig, generate_backdoor

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def two_percent_reports():
    cfg = ExperimentConfig(backdoor_percentage=2.0)
    return [run_pipeline(cfg, seed) for seed in SEEDS]


def mean_asr(cfg):
    return float(np.mean([run_pipeline(cfg, seed).asr for seed in SEEDS]))


def test_default_injection_is_stealthy():
    benign, _ = generate_synthetic_corpus(seed=0)
    poisoned, report = generate_backdoor(benign, TriggerConfig())
    assert report.packets_injected > 0
    assert audit_delta(benign, poisoned) == []


def test_clean_model_accuracy():
    report = run_pipeline(ExperimentConfig(backdoor_percentage=0.0), seed=0)
    assert report.clean_accuracy >= 0.99


def test_two_percent_backdoor(two_percent_reports):
    for report in two_percent_reports:
        assert report.status == "ok"
        assert report.asr >= 0.90
        assert report.accuracy_drop <= 0.01
        assert not report.non_attack_baseline


def test_label_flipping_needs_ten_times_more_rows(two_percent_reports):
    cfg = ExperimentConfig()
    for seed, report in zip(SEEDS, two_percent_reports):
        seeds = derive_seeds(seed)
        _, _, cleanAll = clean_corpus(seeds["corpus"], cfg.corpus, cfg.attack_types)
        clean = select_attacks(cleanAll, cfg.attack_types)
        _, flipReport = search_label_flip(clean, report.asr, hidden_dims=cfg.hidden_dims,
                                          train_cfg=replace(cfg.train, seed=seeds["train"]),
                                          seed=seeds["split"], feature_set=cfg.feature_set)
        assert flipReport.labels_modified_rows >= 10 * report.data_modified_rows


def test_asr_grows_with_burst():
    asr = [mean_asr(ExperimentConfig(trigger=TriggerConfig(burst=b))) for b in (1, 3, 5)]
    assert asr[1] >= asr[0] - 0.05
    assert asr[2] >= asr[1] - 0.05


def test_faster_triggers_keep_their_effect():
    slow = mean_asr(ExperimentConfig())
    fast = mean_asr(ExperimentConfig(attack_delay_scale=0.1))
    assert fast >= slow - 0.05


def test_triggered_rows_spread_over_clusters():
    cfg = ExperimentConfig()
    seeds = derive_seeds(0)
    benign, _, cleanAll = clean_corpus(seeds["corpus"], cfg.corpus, cfg.attack_types)
    clean = select_attacks(cleanAll, cfg.attack_types)
    poisonedTrace, _ = poison_capture(benign, cfg, seeds["injection"])
    training = assemble_training_set(clean, poisoned_features(benign, poisonedTrace, cfg), cfg.backdoor_percentage,
                                     seed=seeds["split"])
    model = train_on_frame(training.train, cfg.feature_set, cfg.classes(), cfg.hidden_dims,
                           replace(cfg.train, seed=seeds["train"]))

    attack = generate_attack_trace(cfg.target_attack, seeds["attack"], cfg.corpus)
    triggered, _ = generate_backdoor(attack, cfg.attack_phase_trigger(seeds["injection"]))
    injected = set(injected_indices(attack, triggered))
    triggeredRows = np.vstack([v.values for v in extract(triggered, cfg.feature_set, "attack") if v.index in injected])
    benignTest = training.test[training.test["label"] == BENIGN]
    X = np.vstack([frame_matrix(benignTest, cfg.feature_set), triggeredRows])
    tags = np.array([TAG_BENIGN] * len(benignTest) + [TAG_TRIGGERED] * len(triggeredRows))
    rows, rowTags = select_benign_predicted(model, X, tags)
    analysis = analyze(model, rows, rowTags, seed=0)
    assert analysis.trigger_spread(2) == 1.0
    assert set(analysis.silhouettes) == set(range(2, 8))


def test_sweep_results_are_reproducible(tmp_path):
    cfg = ExperimentConfig(bursts=(1, 3), delays=(1000,), percentages=(2.0,), seeds=(0,))
    first = reports_to_frame(run_sweep(cfg))
    second = reports_to_frame(run_sweep(cfg))
    first.to_csv(tmp_path / "a.csv", index=False)
    second.to_csv(tmp_path / "b.csv", index=False)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
