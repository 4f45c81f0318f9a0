# -*- coding: utf-8 -*-
'''
-------------------------------------------------------------------------------
 Experiment orchestration

 One pipeline cell:
   synthetic corpus -> clean features
   attacker device capture -> trigger injection -> poisoned benign features
   clean 80/20 split, poisoned rows replace benign training rows
   train -> attack phase (triggers on a fresh attack trace, R = 1) -> report

 plus the label-flipping baseline and sweeps over burst, delay, backdoor
 percentage, feature set and seed.
-------------------------------------------------------------------------------
'''
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
import functools
import itertools
import math
import os
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from pcapbd.errors import ContractError, InsufficientPoisonError
from pcapbd.flow_features import FEATURE_SETS, META_COLUMNS, extract, feature_columns, vectors_to_frame
from pcapbd.helpers import parse_csv_list
from pcapbd.ids_core import (BENIGN, BINARY_CLASSES, DNN_3, TrainConfig, labels_to_indices, predict_classes,
                             train)
from pcapbd.logger import info, warning
from pcapbd.pcap_codec import Trace
from pcapbd.stealth_auditor import injected_indices
from pcapbd.synthetic import ATTACK_TYPES, CorpusConfig, attacker_ip, generate_attack_trace, generate_synthetic_corpus
from pcapbd.trigger_injector import TriggerConfig, generate_backdoor

ATTACK = "attack"
TASKS = ("binary", "multiclass")
POISON_SCOPES = ("device", "all")
SOURCE_CLEAN = "clean"
SOURCE_POISONED = "poisoned"
PRIORITY = "priority"
PRIORITY_TRIGGER, PRIORITY_AFTER_TRIGGER, PRIORITY_OTHER = 0, 1, 2
NULL_EFFECT_THRESHOLD = 0.05
FLIP_SEARCH_STEP = 5.0
SEED_STREAMS = ("corpus", "injection", "split", "train", "attack")


@dataclass(frozen=True)
class ExperimentConfig:
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    backdoor_percentage: float = 2.0
    feature_set: str = "all"
    hidden_dims: Tuple[int, ...] = DNN_3
    train: TrainConfig = field(default_factory=TrainConfig)
    task: str = "binary"
    attack_types: Tuple[str, ...] = ("syn_flood",)
    target_attack: str = "syn_flood"
    poison_scope: str = "device"
    attacker_device: str = attacker_ip()
    attack_burst: Optional[int] = None
    attack_delay: Optional[int] = None
    attack_trigger_len: Optional[int] = None
    attack_delay_scale: float = 1.0
    test_fraction: float = 0.2
    compare_clean: bool = True
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    bursts: Tuple[int, ...] = (3,)
    delays: Tuple[int, ...] = (1000,)
    percentages: Tuple[float, ...] = (2.0,)
    feature_sets: Tuple[str, ...] = ("all",)
    seeds: Tuple[int, ...] = (0,)
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= float(self.backdoor_percentage) <= 100.0:
            raise ContractError(f"backdoor percentage must be in [0, 100], got {self.backdoor_percentage}")
        if self.feature_set not in FEATURE_SETS:
            raise ContractError(f"unknown feature set '{self.feature_set}'")
        if self.task not in TASKS:
            raise ContractError(f"task must be one of {TASKS}, got {self.task}")
        if self.poison_scope not in POISON_SCOPES:
            raise ContractError(f"poison scope must be one of {POISON_SCOPES}, got {self.poison_scope}")
        unknown = [a for a in self.attack_types if a not in ATTACK_TYPES]
        if unknown or not self.attack_types:
            raise ContractError(f"attack types must be a non-empty subset of {ATTACK_TYPES}")
        if self.target_attack not in self.attack_types:
            raise ContractError(f"target attack '{self.target_attack}' is not among the training attacks")
        if not self.attack_delay_scale > 0:
            raise ContractError("attack delay scale must be > 0")
        if not 0.0 < self.test_fraction < 1.0:
            raise ContractError("test fraction must be in (0, 1)")
        for name in ("bursts", "delays", "percentages", "feature_sets", "seeds"):
            if not getattr(self, name):
                raise ContractError(f"sweep axis '{name}' must not be empty")
        if any(not 0.0 <= float(p) <= 100.0 for p in self.percentages):
            raise ContractError("sweep percentages must be in [0, 100]")
        if any(f not in FEATURE_SETS for f in self.feature_sets):
            raise ContractError(f"sweep feature sets must be among {FEATURE_SETS}")

    @classmethod
    def from_conf(cls, conf):
        '''
        Build from the dot-notation INI config ([trigger], [train],
        [experiment], [sweep], [synthetic]).
        '''
        tc = conf.get("trigger", {})
        trainConf = conf.get("train", {})
        ec = conf.get("experiment", {})
        sc = conf.get("sweep", {})
        syn = conf.get("synthetic", {})
        srcAllow = parse_csv_list(tc.get("src_allow")) or None
        trigger = TriggerConfig(**{k: v for k, v in tc.items() if k != "src_allow"}, src_allow=srcAllow)
        trainCfg = TrainConfig(**dict(trainConf))
        corpus = CorpusConfig(**dict(syn))
        kwargs = dict(ec)
        for key in ("hidden_dims", "attack_types"):
            if key in kwargs:
                kwargs[key] = tuple(parse_csv_list(kwargs[key], int if key == "hidden_dims" else str))
        casts = {"bursts": int, "delays": int, "percentages": float, "feature_sets": str, "seeds": int}
        for key, cast in casts.items():
            if key in sc:
                kwargs[key] = tuple(parse_csv_list(sc[key], cast))
        if "workers" in sc:
            kwargs["workers"] = int(sc["workers"])
        return cls(trigger=trigger, train=trainCfg, corpus=corpus, **kwargs)

    def classes(self):
        if self.task == "binary":
            return list(BINARY_CLASSES)
        return [BENIGN] + list(self.attack_types)

    def attack_phase_trigger(self, seed):
        '''
        Trigger settings for the attack phase: every eligible attacker packet is
        an anchor, burst/delay/length overridable, delay scaled.
        '''
        t = self.trigger
        delay = self.attack_delay if self.attack_delay is not None else t.delay
        return replace(
            t, ratio=1.0, seed=int(seed),
            burst=self.attack_burst if self.attack_burst is not None else t.burst,
            delay=max(1, int(round(delay * self.attack_delay_scale))),
            trigger_len=self.attack_trigger_len if self.attack_trigger_len is not None else t.trigger_len,
            src_allow=(self.attacker_device,))

    def as_dict(self):
        return asdict(self)


@dataclass
class TrainingSet:
    train: pd.DataFrame
    test: pd.DataFrame
    n_poisoned: int = 0

    def label_counts(self, part="train"):
        return getattr(self, part)["label"].value_counts().sort_index().to_dict()


@dataclass
class EvalReport:
    classes: List[str] = field(default_factory=list)
    clean_accuracy: float = float("nan")
    confusion: Optional[np.ndarray] = None
    asr: float = float("nan")
    asr_anchor_rows: float = float("nan")
    asr_all_rows: float = float("nan")
    clean_attack_miss_rate: float = float("nan")
    n_trigger_rows: int = 0
    n_rows: int = 0
    non_attack_baseline: bool = False
    clean_model_accuracy: float = float("nan")
    data_modified_rows: int = 0
    data_modified_pct: float = 0.0
    labels_modified_rows: int = 0
    labels_modified_pct: float = 0.0
    n_train: int = 0
    status: str = "ok"
    error: str = ""
    provenance: Dict = field(default_factory=dict)

    @property
    def accuracy_drop(self):
        return self.clean_model_accuracy - self.clean_accuracy

    @property
    def attack_effect(self):
        return self.asr - self.clean_attack_miss_rate

    def to_row(self):
        '''
        Flat dict for the results table, provenance echoed.
        '''
        row = dict(self.provenance)
        row.update({
            "status": self.status,
            "n_train": self.n_train,
            "data_modified_rows": self.data_modified_rows,
            "data_modified_pct": self.data_modified_pct,
            "labels_modified_rows": self.labels_modified_rows,
            "labels_modified_pct": self.labels_modified_pct,
            "clean_accuracy": self.clean_accuracy,
            "clean_model_accuracy": self.clean_model_accuracy,
            "asr": self.asr,
            "asr_anchor_rows": self.asr_anchor_rows,
            "asr_all_rows": self.asr_all_rows,
            "clean_attack_miss_rate": self.clean_attack_miss_rate,
            "n_trigger_rows": self.n_trigger_rows,
            "n_rows": self.n_rows,
            "non_attack_baseline": self.non_attack_baseline,
            "error": self.error,
        })
        return row


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# HELPER
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def derive_seeds(seed):
    '''
    Independent integer seeds for every stage of one pipeline run.
    '''
    children = np.random.SeedSequence(int(seed)).spawn(len(SEED_STREAMS))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(SEED_STREAMS, children)}


def features_frame(trace, label, feature_set="all"):
    return vectors_to_frame(extract(trace, feature_set, label), feature_set)


def frame_matrix(frame, feature_set="all"):
    return frame[feature_columns(feature_set)].to_numpy(dtype=float)


def labels_for_classes(labels, classes):
    '''
    Attack types collapse onto "attack" when the classes are binary.
    '''
    mapped = [l if l in classes else ATTACK for l in labels]
    return labels_to_indices(mapped, classes)


def confusion_matrix(yTrue, yPred, nClasses):
    '''Rows are true classes, columns predictions.'''
    counts = np.bincount(np.asarray(yTrue) * nClasses + np.asarray(yPred), minlength=nClasses * nClasses)
    return counts.reshape(nClasses, nClasses)


def stratified_split(labels, test_fraction, rng):
    '''
    (train positions, test positions), each label split separately with
    round(n * test_fraction) rows going to test.
    '''
    labels = np.asarray(labels)
    trainPos, testPos = [], []
    for label in sorted(set(labels)):
        positions = np.flatnonzero(labels == label)
        positions = positions[rng.permutation(len(positions))]
        nTest = int(round(len(positions) * test_fraction))
        testPos.append(positions[:nTest])
        trainPos.append(positions[nTest:])
    return np.sort(np.concatenate(trainPos)), np.sort(np.concatenate(testPos))


def attacker_capture(trace, device_ip, scope="device"):
    '''
    The attacker's own capture: packets from or to `device_ip`, or the whole
    trace with scope "all".
    '''
    if scope == "all":
        return trace
    packets = [p for p in trace.packets if p.ip is not None and device_ip in (p.ip.src, p.ip.dst)]
    return replace(trace, packets=packets)


@functools.lru_cache(maxsize=2)
def clean_corpus(corpus_seed, corpus_cfg, attack_types=ATTACK_TYPES):
    '''
    (benign trace, attack traces, clean feature frame with all columns of
    the benign trace and the `attack_types` traces). Cached per process,
    sweep cells sharing a seed share the corpus.
    '''
    benign, attacks = generate_synthetic_corpus(corpus_seed, cfg=corpus_cfg)
    frames = [features_frame(benign, BENIGN)]
    frames += [features_frame(attacks[name], name) for name in attack_types]
    return benign, attacks, pd.concat(frames, ignore_index=True)


def select_attacks(frame, attack_types):
    return frame[frame["label"].isin([BENIGN] + list(attack_types))].reset_index(drop=True)


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# DATASET
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def assemble_training_set(clean_features, poisoned_benign_features, backdoor_percentage, seed=0, test_fraction=0.2):
    '''
    Stratified split of the clean rows, then floor(N_train * pct / 100)
    poisoned rows replace as many randomly chosen benign training rows.
    With a "priority" column the poisoned rows are taken lowest priority
    first, at random within a priority.

    Parameters
    ----------
    clean_features: pandas.DataFrame
       Labeled clean rows (packet_index, label, features).
    poisoned_benign_features: pandas.DataFrame
       Rows from the poisoned capture. All must be labeled benign. An
       optional "priority" column (see poisoned_features) orders them.
    backdoor_percentage: float
       Share of the training set taken from the poisoned capture.

    Returns
    -------
    training: TrainingSet
       Frames carry an extra "source" column (clean / poisoned).
    '''
    if not 0.0 <= float(backdoor_percentage) <= 100.0:
        raise ContractError(f"backdoor percentage must be in [0, 100], got {backdoor_percentage}")
    poisoned = poisoned_benign_features if poisoned_benign_features is not None else clean_features.iloc[0:0]
    notBenign = poisoned.loc[poisoned["label"] != BENIGN, "label"].unique()
    if len(notBenign):
        raise ContractError(f"poisoned rows must all be benign, found labels {list(notBenign)}")

    rng = np.random.default_rng(seed)
    trainPos, testPos = stratified_split(clean_features["label"].to_numpy(), test_fraction, rng)
    train = clean_features.iloc[trainPos].reset_index(drop=True).assign(source=SOURCE_CLEAN)
    test = clean_features.iloc[testPos].reset_index(drop=True).assign(source=SOURCE_CLEAN)

    nPoisoned = math.floor(len(train) * float(backdoor_percentage) / 100.0)
    if nPoisoned == 0:
        return TrainingSet(train, test, 0)
    benignPos = np.flatnonzero(train["label"].to_numpy() == BENIGN)
    achievable = min(len(poisoned), len(benignPos))
    if nPoisoned > achievable:
        raise InsufficientPoisonError(float(backdoor_percentage), 100.0 * achievable / len(train))

    replaced = np.sort(rng.choice(benignPos, size=nPoisoned, replace=False))
    order = rng.permutation(len(poisoned))
    if PRIORITY in poisoned.columns:
        order = order[np.argsort(poisoned[PRIORITY].to_numpy()[order], kind="stable")]
    taken = np.sort(order[:nPoisoned])
    poisonedRows = poisoned.iloc[taken].reset_index(drop=True).assign(label=BENIGN, source=SOURCE_POISONED)
    kept = train.drop(index=replaced)
    train = pd.concat([kept, poisonedRows[kept.columns]], ignore_index=True)
    info(f"Training set: {len(train)} rows, {nPoisoned} poisoned ({backdoor_percentage}%), test {len(test)} rows")
    return TrainingSet(train, test, nPoisoned)


def write_training_set(training, outdir):
    os.makedirs(outdir, exist_ok=True)
    paths = {}
    for part in ("train", "test"):
        paths[part] = os.path.join(outdir, f"{part}.csv")
        getattr(training, part).to_csv(paths[part], index=False)
        info(f"Writing {part} split: {paths[part]}")
    return paths


def poison_capture(benign, exp_cfg, injection_seed):
    '''
    Inject triggers into the attacker's capture, returning the poisoned
    trace and the injection report.
    '''
    capture = attacker_capture(benign, exp_cfg.attacker_device, exp_cfg.poison_scope)
    allow = (exp_cfg.attacker_device,) if exp_cfg.poison_scope == "device" else exp_cfg.trigger.src_allow
    cfg = replace(exp_cfg.trigger, seed=int(injection_seed), src_allow=allow)
    return generate_backdoor(capture, cfg)


def trigger_priority(packet_indices, injected):
    '''
    0 for rows of injected packets, 1 for the row right after one, 2 for
    the rest.
    '''
    injected = set(int(i) for i in injected)
    return np.array([PRIORITY_TRIGGER if i in injected
                     else PRIORITY_AFTER_TRIGGER if i - 1 in injected
                     else PRIORITY_OTHER for i in np.asarray(packet_indices, dtype=int)], dtype=int)


def poisoned_features(benign, poisoned, exp_cfg, feature_set="all"):
    '''
    Benign-labeled feature rows of the poisoned capture with a "priority"
    column marking the trigger rows and the rows that follow them.
    '''
    capture = attacker_capture(benign, exp_cfg.attacker_device, exp_cfg.poison_scope)
    frame = features_frame(poisoned, BENIGN, feature_set)
    priority = trigger_priority(frame["packet_index"], injected_indices(capture, poisoned))
    info(f"Poisoned capture: {int((priority == PRIORITY_TRIGGER).sum())} trigger rows of {len(frame)}")
    return frame.assign(**{PRIORITY: priority})


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# TRAIN / EVALUATE
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def train_on_frame(frame, feature_set, classes, hidden_dims=DNN_3, train_cfg=None):
    y = labels_for_classes(frame["label"], classes)
    return train(frame_matrix(frame, feature_set), y, train_cfg or TrainConfig(), hidden_dims, classes)


def evaluate_clean(model, test_frame, feature_set):
    '''
    (accuracy, confusion matrix) on trigger-free test rows.
    '''
    yTrue = labels_for_classes(test_frame["label"], model.classes)
    yPred = predict_classes(model, frame_matrix(test_frame, feature_set))
    return float(np.mean(yTrue == yPred)), confusion_matrix(yTrue, yPred, len(model.classes))


def miss_rate(model, X):
    '''Share of rows predicted benign.'''
    if len(X) == 0:
        return float("nan")
    return float(np.mean(predict_classes(model, X) == model.benign_index))


def evaluate_attack(model, clean_attack_trace, cfg, feature_set="all", test_frame=None):
    '''
    Attack phase: inject triggers into `clean_attack_trace` and measure how
    many trigger rows the model now calls benign.

    ASR counts the feature rows of the injected trigger packets.
    asr_anchor_rows covers only the rows of the original attack packets and
    asr_all_rows every row of the triggered trace. The same trace without
    triggers gives the clean miss rate. An ASR at most 0.05 above it flags
    the run as a non-attack baseline.

    Parameters
    ----------
    model: IdsModel
    clean_attack_trace: Trace
    cfg: TriggerConfig
       Attack-phase trigger settings (usually ratio 1).
    feature_set: str
    test_frame: pandas.DataFrame
       Clean test rows for accuracy and the confusion matrix, optional.

    Returns
    -------
    report: EvalReport
    '''
    report = EvalReport(classes=list(model.classes))
    triggered, _ = generate_backdoor(clean_attack_trace, cfg)
    injected = set(injected_indices(clean_attack_trace, triggered))
    vectors = extract(triggered, feature_set, ATTACK)
    X = np.vstack([v.values for v in vectors]) if vectors else np.zeros((0, len(feature_columns(feature_set))))
    predictedBenign = predict_classes(model, X) == model.benign_index if len(X) else np.zeros(0, dtype=bool)
    triggerRows = np.array([v.index in injected for v in vectors], dtype=bool)

    def share(mask):
        return float(np.mean(predictedBenign[mask])) if mask.any() else float("nan")

    report.n_rows = len(vectors)
    report.n_trigger_rows = int(triggerRows.sum())
    report.asr = share(triggerRows)
    report.asr_anchor_rows = share(~triggerRows)
    report.asr_all_rows = share(np.ones(len(vectors), dtype=bool))
    if report.n_trigger_rows == 0:
        warning("No trigger fits between the attack packets, ASR is undefined")
    cleanVectors = extract(clean_attack_trace, feature_set, ATTACK)
    report.clean_attack_miss_rate = miss_rate(model, np.vstack([v.values for v in cleanVectors])) \
        if cleanVectors else float("nan")
    report.non_attack_baseline = bool(not report.attack_effect > NULL_EFFECT_THRESHOLD)
    if report.non_attack_baseline:
        warning(f"ASR {report.asr:.4f} is within {NULL_EFFECT_THRESHOLD} of the clean miss rate "
                f"{report.clean_attack_miss_rate:.4f}: non-attack baseline")

    if test_frame is not None and len(test_frame):
        report.clean_accuracy, report.confusion = evaluate_clean(model, test_frame, feature_set)
    info(f"ASR {report.asr:.4f} on {report.n_trigger_rows} trigger rows of {report.n_rows}, "
         f"clean accuracy {report.clean_accuracy:.4f}")
    return report


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# PIPELINE
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def provenance(exp_cfg, seed, seeds=None):
    return {
        "seed": int(seed),
        **{f"seed_{k}": v for k, v in (seeds or {}).items()},
        "task": exp_cfg.task,
        "target_attack": exp_cfg.target_attack,
        "feature_set": exp_cfg.feature_set,
        "hidden_dims": "-".join(str(h) for h in exp_cfg.hidden_dims),
        "burst": exp_cfg.trigger.burst,
        "delay": exp_cfg.trigger.delay,
        "ratio": exp_cfg.trigger.ratio,
        "bt_window": exp_cfg.trigger.bt_window,
        "trigger_len": exp_cfg.trigger.trigger_len,
        "port_mode": exp_cfg.trigger.port_mode,
        "poison_scope": exp_cfg.poison_scope,
        "backdoor_percentage": float(exp_cfg.backdoor_percentage),
        "attack_delay_scale": exp_cfg.attack_delay_scale,
        "learning_rate": exp_cfg.train.learning_rate,
        "batch_size": exp_cfg.train.batch_size,
        "epochs": exp_cfg.train.epochs,
    }


def run_pipeline(exp_cfg, seed=0):
    '''
    One full experiment cell. Everything random derives from `seed`.
    '''
    seeds = derive_seeds(seed)
    classes = exp_cfg.classes()
    benign, _, cleanAll = clean_corpus(seeds["corpus"], exp_cfg.corpus, tuple(exp_cfg.attack_types))
    clean = select_attacks(cleanAll, exp_cfg.attack_types)

    poisonedTrace, _ = poison_capture(benign, exp_cfg, seeds["injection"])
    poisonedFrame = poisoned_features(benign, poisonedTrace, exp_cfg)
    training = assemble_training_set(clean, poisonedFrame, exp_cfg.backdoor_percentage,
                                     seed=seeds["split"], test_fraction=exp_cfg.test_fraction)

    trainCfg = replace(exp_cfg.train, seed=seeds["train"])
    model = train_on_frame(training.train, exp_cfg.feature_set, classes, exp_cfg.hidden_dims, trainCfg)

    attackTrace = generate_attack_trace(exp_cfg.target_attack, seeds["attack"], exp_cfg.corpus)
    report = evaluate_attack(model, attackTrace, exp_cfg.attack_phase_trigger(seeds["injection"]),
                             exp_cfg.feature_set, test_frame=training.test)
    report.n_train = len(training.train)
    report.data_modified_rows = training.n_poisoned
    report.data_modified_pct = 100.0 * training.n_poisoned / len(training.train)
    report.provenance = provenance(exp_cfg, seed, seeds)

    if exp_cfg.compare_clean:
        if training.n_poisoned == 0:
            report.clean_model_accuracy = report.clean_accuracy
        else:
            cleanTrain = assemble_training_set(clean, None, 0.0, seed=seeds["split"],
                                               test_fraction=exp_cfg.test_fraction)
            cleanModel = train_on_frame(cleanTrain.train, exp_cfg.feature_set, classes, exp_cfg.hidden_dims, trainCfg)
            report.clean_model_accuracy, _ = evaluate_clean(cleanModel, cleanTrain.test, exp_cfg.feature_set)
    return report


def run_label_flip_baseline(clean_features, flip_percentage, hidden_dims=DNN_3, train_cfg=None, seed=0,
                            feature_set="all", task="binary", test_fraction=0.2):
    '''
    Relabel floor(n * pct / 100) of the attack training rows as benign,
    train, and report the attack-miss rate on the clean attack test rows
    (stored as asr).
    '''
    if not 0.0 <= float(flip_percentage) <= 100.0:
        raise ContractError(f"flip percentage must be in [0, 100], got {flip_percentage}")
    attackTypes = sorted(set(clean_features["label"]) - {BENIGN})
    classes = list(BINARY_CLASSES) if task == "binary" else [BENIGN] + attackTypes
    training = assemble_training_set(clean_features, None, 0.0, seed=seed, test_fraction=test_fraction)
    train = training.train.copy()
    attackPos = np.flatnonzero(train["label"].to_numpy() != BENIGN)
    nFlip = math.floor(len(attackPos) * float(flip_percentage) / 100.0)
    if nFlip:
        rng = np.random.default_rng(np.random.SeedSequence(int(seed)).spawn(1)[0])
        flipped = rng.choice(attackPos, size=nFlip, replace=False)
        train.loc[flipped, "label"] = BENIGN
    info(f"Label flip baseline: {nFlip} of {len(attackPos)} attack training rows relabeled benign")

    model = train_on_frame(train, feature_set, classes, hidden_dims, train_cfg)
    report = EvalReport(classes=classes, n_train=len(train))
    report.clean_accuracy, report.confusion = evaluate_clean(model, training.test, feature_set)
    attackTest = training.test[training.test["label"] != BENIGN]
    report.asr = miss_rate(model, frame_matrix(attackTest, feature_set))
    report.labels_modified_rows = nFlip
    report.labels_modified_pct = float(flip_percentage)
    report.provenance = {"seed": int(seed), "task": task, "feature_set": feature_set,
                         "hidden_dims": "-".join(str(h) for h in hidden_dims),
                         "flip_percentage": float(flip_percentage)}
    return report


def search_label_flip(clean_features, target_miss_rate, step=FLIP_SEARCH_STEP, **kwargs):
    '''
    Smallest flip percentage (bisection, to within `step` points) whose
    attack-miss rate reaches `target_miss_rate`.

    Returns
    -------
    percentage: float
    report: EvalReport
       Baseline report at that percentage.
    '''
    runs = {}

    def run(pct):
        if pct not in runs:
            runs[pct] = run_label_flip_baseline(clean_features, pct, **kwargs)
        return runs[pct]

    lo, hi = 0.0, 100.0
    if run(hi).asr < target_miss_rate:
        warning(f"Flipping every attack label reaches only {run(hi).asr:.4f} < {target_miss_rate:.4f}")
        return hi, run(hi)
    if run(lo).asr >= target_miss_rate:
        return lo, run(lo)
    while hi - lo > step:
        mid = (lo + hi) / 2.0
        if run(mid).asr >= target_miss_rate:
            hi = mid
        else:
            lo = mid
    info(f"Label flip search: {hi:.2f}% of attack labels reach miss rate {target_miss_rate:.4f}")
    return hi, run(hi)


def compare_with_baseline(trigger_report, flip_percentage, baseline_report):
    '''
    One comparison row: data modified by the trigger attack against labels
    modified by the flipping baseline for the same attack-miss rate.
    '''
    rows = trigger_report.data_modified_rows
    return {
        "asr": trigger_report.asr,
        "data_modified_pct": trigger_report.data_modified_pct,
        "data_modified_rows": rows,
        "labels_modified_pct": float(flip_percentage),
        "labels_modified_rows": baseline_report.labels_modified_rows,
        "baseline_miss_rate": baseline_report.asr,
        "modified_rows_ratio": baseline_report.labels_modified_rows / rows if rows else float("inf"),
    }


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# SWEEP
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def sweep_cells(exp_cfg):
    '''
    (cell config, seed) for the grid burst x delay x percentage x feature set x seed.
    '''
    cells = []
    for burst, delay, pct, featureSet, seed in itertools.product(
            exp_cfg.bursts, exp_cfg.delays, exp_cfg.percentages, exp_cfg.feature_sets, exp_cfg.seeds):
        trigger = replace(exp_cfg.trigger, burst=int(burst), delay=int(delay))
        cells.append((replace(exp_cfg, trigger=trigger, backdoor_percentage=float(pct), feature_set=featureSet),
                      int(seed)))
    return cells


def run_cell(cell):
    cellCfg, seed = cell
    try:
        return run_pipeline(cellCfg, seed)
    except Exception as e:
        warning(f"Sweep cell failed (seed {seed}, burst {cellCfg.trigger.burst}, delay {cellCfg.trigger.delay}, "
                f"{cellCfg.backdoor_percentage}%, {cellCfg.feature_set}): {e}")
        return EvalReport(status="failed", error=f"{type(e).__name__}: {e}",
                          provenance=provenance(cellCfg, seed))


def run_sweep(exp_cfg):
    '''
    Every grid cell as a full pipeline run. Failed cells are reported with
    status "failed" and the sweep carries on. With workers > 1 cells run in
    a process pool; results come back in grid order either way.
    '''
    cells = sweep_cells(exp_cfg)
    info(f"Sweep over {len(cells)} cells with {exp_cfg.workers} worker(s)")
    if exp_cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=exp_cfg.workers) as pool:
            reports = list(pool.map(run_cell, cells))
    else:
        reports = [run_cell(cell) for cell in cells]
    failed = sum(1 for r in reports if r.status != "ok")
    if failed:
        warning(f"{failed} of {len(reports)} sweep cells failed")
    return reports


def reports_to_frame(reports):
    return pd.DataFrame([r.to_row() for r in reports])


def write_results_table(reports, path):
    '''
    One CSV row per run, parameters and seeds echoed.
    '''
    reports_to_frame(reports).to_csv(path, index=False)
    info(f"Writing results table: {path}")
