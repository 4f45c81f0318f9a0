#!/usr/bin/env python3
# -*- coding: utf-8 -*-
'''
-------------------------------------------------------------------------------
 Command line interface

   pcapbd synth      synthetic benign and attack captures
   pcapbd inject     plant backdoor triggers into a capture
   pcapbd audit      TCP stream warnings, optionally as delta to a baseline
   pcapbd extract    damped flow statistics per packet to CSV
   pcapbd train      train an intrusion detection model on feature CSVs
   pcapbd evaluate   attack phase: ASR of a model on a triggered attack capture
   pcapbd baseline   label-flipping baseline, fixed percentage or search
   pcapbd defend     activation clustering of benign-predicted rows
   pcapbd sweep      grid of full experiment runs from a config file

 Exit codes: 0 success, 1 domain error, 2 usage error. Durations are given
 in microseconds.
-------------------------------------------------------------------------------
'''
import os
import sys

import click
import numpy as np
import pandas as pd

from pcapbd.config import (ENV_VAR_SEED, EXIT_DOMAIN_ERROR, EXIT_OK, EXIT_USAGE_ERROR,
                           FILEPATH_CONFIG_TEMPLATE_ORIGINAL, FILEPATH_CONFIG_USER, FILEPATH_LOG_PIPELINE)
from pcapbd.defense import REDUCE_METHODS, TAG_BENIGN, TAG_TRIGGERED, analyze, select_benign_predicted, \
    write_cluster_points
from pcapbd.errors import ContractError, PcapbdError
from pcapbd.exp_harness import (ExperimentConfig, evaluate_attack, run_label_flip_baseline, run_sweep,
                                search_label_flip, write_results_table)
from pcapbd.flow_features import FEATURE_SETS, feature_columns, feature_set_of_columns, read_features, \
    write_features, extract
from pcapbd.helpers import get_config_in_dot_notation, log_resolved_config, main_timer, parse_csv_list, \
    print_starting_banner
from pcapbd.ids_core import BENIGN, BINARY_CLASSES, DNN_3, DNN_5, TrainConfig, load_model, save_model, train
from pcapbd.logger import add_file_handler, error
from pcapbd.pcap_codec import read_trace, write_trace
from pcapbd.reports import format_cluster_report, format_eval_report, format_findings, format_injection_report, \
    write_report
from pcapbd.stealth_auditor import audit, audit_delta, write_findings
from pcapbd.synthetic import CorpusConfig, attacker_ip, generate_synthetic_corpus, write_corpus
from pcapbd.trigger_injector import PORT_MODES, TriggerConfig, generate_backdoor, strawman_inject, \
    write_injection_report

HIDDEN_PRESETS = {"dnn3": DNN_3, "dnn5": DNN_5}
DEFAULTS = TriggerConfig()


def parse_hidden_dims(value):
    if value.lower() in HIDDEN_PRESETS:
        return HIDDEN_PRESETS[value.lower()]
    dims = tuple(parse_csv_list(value, int))
    if not dims or any(d < 1 for d in dims):
        raise click.BadParameter(f"hidden widths must be positive integers, got '{value}'")
    return dims


def trigger_options(func):
    '''
    Shared trigger flags of inject and evaluate.
    '''
    options = [
        click.option("--burst", type=int, default=DEFAULTS.burst, show_default=True, help="B, triggers per anchor"),
        click.option("--delay", type=int, default=DEFAULTS.delay, show_default=True, help="D in microseconds"),
        click.option("--bt-window", type=int, default=DEFAULTS.bt_window, show_default=True,
                     help="BT in microseconds"),
        click.option("--trigger-len", type=int, default=DEFAULTS.trigger_len, show_default=True,
                     help="L, trigger payload bytes, -1 keeps the template's"),
        click.option("--dst-ip", default=DEFAULTS.dst_ip, show_default=True),
        click.option("--dst-mac", default=DEFAULTS.dst_mac, show_default=True),
        click.option("--src-allow", default=None, help="comma separated attacker source IPs"),
        click.option("--port-mode", type=click.Choice(PORT_MODES), default=DEFAULTS.port_mode, show_default=True),
        click.option("--seed", type=int, default=0, envvar=ENV_VAR_SEED, show_default=True),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def trigger_config(ratio, burst, delay, bt_window, trigger_len, dst_ip, dst_mac, src_allow, port_mode, seed):
    return TriggerConfig(burst=burst, delay=delay, ratio=ratio, bt_window=bt_window, trigger_len=trigger_len,
                         dst_ip=dst_ip, dst_mac=dst_mac, seed=seed,
                         src_allow=parse_csv_list(src_allow) or None, port_mode=port_mode)


def load_feature_frames(paths):
    frames = [read_features(p) for p in paths]
    columns = [list(f.columns) for f in frames]
    if any(c != columns[0] for c in columns):
        raise ContractError("feature files have different columns")
    return pd.concat(frames, ignore_index=True)


def feature_set_for_width(width):
    for featureSet in FEATURE_SETS:
        if len(feature_columns(featureSet)) == width:
            return featureSet
    raise ContractError(f"no feature set has {width} columns")


@click.group(context_settings=dict(help_option_names=["-h", "--help"]))
@click.option("--log-file", default=FILEPATH_LOG_PIPELINE, show_default=True, help="pipeline log file")
def cli(log_file):
    '''
    PCAP backdoor toolkit: trigger injection, stealth audit, flow features,
    intrusion detection model, activation clustering and experiments.
    '''
    add_file_handler(log_file)


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# CAPTURES
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

@cli.command()
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--devices", type=int, default=CorpusConfig.n_devices, show_default=True)
@click.option("--duration", type=float, default=CorpusConfig.duration, show_default=True, help="seconds")
@click.option("--seed", type=int, default=0, envvar=ENV_VAR_SEED, show_default=True)
@main_timer("synth")
def synth(out_dir, devices, duration, seed):
    '''Write benign.pcap and one capture per attack type.'''
    cfg = CorpusConfig(n_devices=devices, duration=duration)
    log_resolved_config("synth", dict(out_dir=out_dir, seed=seed, **cfg.as_dict()))
    benign, attacks = generate_synthetic_corpus(seed, cfg=cfg)
    for name, path in write_corpus(benign, attacks, out_dir).items():
        click.echo(f"{name}\t{path}")
    return EXIT_OK


@cli.command()
@click.option("--in", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "output_path", required=True, type=click.Path(dir_okay=False))
@click.option("--ratio", type=float, default=DEFAULTS.ratio, show_default=True, help="R, anchor probability")
@trigger_options
@click.option("--report", "report_path", default=None, type=click.Path(dir_okay=False),
              help="injection report (INI)")
@click.option("--strawman", is_flag=True, help="naive in-conversation copies instead of crafted triggers")
@main_timer("inject")
def inject(input_path, output_path, ratio, burst, delay, bt_window, trigger_len, dst_ip, dst_mac, src_allow,
           port_mode, seed, report_path, strawman):
    '''Plant backdoor triggers into a capture.'''
    cfg = trigger_config(ratio, burst, delay, bt_window, trigger_len, dst_ip, dst_mac, src_allow, port_mode, seed)
    log_resolved_config("inject", dict(input=input_path, output=output_path, strawman=strawman, **cfg.as_dict()))
    trace = read_trace(input_path)
    poisoned, report = (strawman_inject if strawman else generate_backdoor)(trace, cfg)
    write_trace(poisoned, output_path)
    if report_path:
        write_injection_report(report, report_path, cfg)
    click.echo(format_injection_report(report, cfg, input_path, output_path))
    return EXIT_OK


@cli.command("audit")
@click.option("--in", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--baseline", "baseline_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="clean capture; only findings added on top of it are reported")
@click.option("--out", "output_path", default=None, type=click.Path(dir_okay=False), help="findings file")
@main_timer("audit")
def audit_command(input_path, baseline_path, output_path):
    '''TCP stream warnings; exits 1 when anything is reported.'''
    log_resolved_config("audit", dict(input=input_path, baseline=baseline_path, output=output_path))
    trace = read_trace(input_path)
    if baseline_path:
        findings = audit_delta(read_trace(baseline_path), trace)
    else:
        findings = audit(trace)
    if output_path:
        write_findings(findings, output_path)
    click.echo(format_findings(findings, input_path, baseline_path))
    if findings:
        error(f"{len(findings)} findings")
        return EXIT_DOMAIN_ERROR
    return EXIT_OK


@cli.command("extract")
@click.option("--in", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "output_path", required=True, type=click.Path(dir_okay=False))
@click.option("--feature-set", type=click.Choice(FEATURE_SETS), default="all", show_default=True)
@click.option("--label", default=BENIGN, show_default=True)
@main_timer("extract")
def extract_command(input_path, output_path, feature_set, label):
    '''Damped flow statistics per packet to CSV.'''
    log_resolved_config("extract", dict(input=input_path, output=output_path, feature_set=feature_set, label=label))
    write_features(extract(read_trace(input_path), feature_set, label), output_path, feature_set)
    return EXIT_OK


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# MODEL
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

@cli.command("train")
@click.option("--features", "feature_paths", required=True, multiple=True,
              type=click.Path(exists=True, dir_okay=False), help="labeled feature CSV, repeatable")
@click.option("--out", "output_path", required=True, type=click.Path(dir_okay=False), help="model .npz")
@click.option("--task", type=click.Choice(["binary", "multiclass"]), default="binary", show_default=True)
@click.option("--hidden-dims", default="dnn3", show_default=True, help="dnn3, dnn5 or comma separated widths")
@click.option("--epochs", type=int, default=TrainConfig.epochs, show_default=True)
@click.option("--learning-rate", type=float, default=TrainConfig.learning_rate, show_default=True)
@click.option("--batch-size", type=int, default=TrainConfig.batch_size, show_default=True)
@click.option("--seed", type=int, default=0, envvar=ENV_VAR_SEED, show_default=True)
@main_timer("train")
def train_command(feature_paths, output_path, task, hidden_dims, epochs, learning_rate, batch_size, seed):
    '''Train an intrusion detection model on feature CSVs.'''
    hidden = parse_hidden_dims(hidden_dims)
    cfg = TrainConfig(learning_rate=learning_rate, batch_size=batch_size, epochs=epochs, seed=seed)
    log_resolved_config("train", dict(features=",".join(feature_paths), output=output_path, task=task,
                                      hidden_dims=hidden, **vars(cfg)))
    frame = load_feature_frames(feature_paths)
    featureSet = feature_set_of_columns(frame.columns)
    labels = frame["label"].to_numpy()
    if task == "binary":
        classes = list(BINARY_CLASSES)
        labels = np.where(labels == BENIGN, BENIGN, "attack")
    else:
        classes = [BENIGN] + sorted(set(labels) - {BENIGN})
    y = np.array([classes.index(l) for l in labels], dtype=int)
    model = train(frame[feature_columns(featureSet)].to_numpy(dtype=float), y, cfg, hidden, classes)
    save_model(model, output_path)
    return EXIT_OK


@cli.command("evaluate")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--attack", "attack_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="clean attack capture")
@click.option("--test-features", default=None, type=click.Path(exists=True, dir_okay=False),
              help="clean test rows for accuracy and confusion matrix")
@click.option("--ratio", type=float, default=1.0, show_default=True, help="R at attack time")
@trigger_options
@click.option("--attacker", default=attacker_ip(), show_default=True, help="attacker device IP")
@click.option("--results", "results_path", default=None, type=click.Path(dir_okay=False), help="results CSV")
@click.option("--report", "report_path", default=None, type=click.Path(dir_okay=False), help="text report")
@main_timer("evaluate")
def evaluate_command(model_path, attack_path, test_features, ratio, burst, delay, bt_window, trigger_len, dst_ip,
                     dst_mac, src_allow, port_mode, seed, attacker, results_path, report_path):
    '''Attack phase: ASR of a model on a triggered attack capture.'''
    cfg = trigger_config(ratio, burst, delay, bt_window, trigger_len, dst_ip, dst_mac,
                         src_allow or attacker, port_mode, seed)
    log_resolved_config("evaluate", dict(model=model_path, attack=attack_path, test_features=test_features,
                                         **cfg.as_dict()))
    model = load_model(model_path)
    featureSet = feature_set_for_width(model.input_width)
    testFrame = read_features(test_features) if test_features else None
    report = evaluate_attack(model, read_trace(attack_path), cfg, featureSet, test_frame=testFrame)
    report.provenance = dict(model=os.path.basename(model_path), feature_set=featureSet, **cfg.as_dict())
    text = format_eval_report(report)
    click.echo(text)
    if report_path:
        write_report(text, report_path)
    if results_path:
        write_results_table([report], results_path)
    return EXIT_OK


@cli.command("baseline")
@click.option("--features", "feature_paths", required=True, multiple=True,
              type=click.Path(exists=True, dir_okay=False), help="clean labeled feature CSV, repeatable")
@click.option("--flip", type=float, default=None, help="percentage of attack training labels flipped")
@click.option("--target", type=float, default=None, help="search the flip percentage reaching this miss rate")
@click.option("--task", type=click.Choice(["binary", "multiclass"]), default="binary", show_default=True)
@click.option("--hidden-dims", default="dnn3", show_default=True)
@click.option("--epochs", type=int, default=TrainConfig.epochs, show_default=True)
@click.option("--seed", type=int, default=0, envvar=ENV_VAR_SEED, show_default=True)
@click.option("--results", "results_path", default=None, type=click.Path(dir_okay=False))
@main_timer("baseline")
def baseline_command(feature_paths, flip, target, task, hidden_dims, epochs, seed, results_path):
    '''Label-flipping baseline, at a fixed percentage or searched.'''
    if (flip is None) == (target is None):
        raise click.UsageError("give exactly one of --flip and --target")
    hidden = parse_hidden_dims(hidden_dims)
    cfg = TrainConfig(epochs=epochs, seed=seed)
    log_resolved_config("baseline", dict(features=",".join(feature_paths), flip=flip, target=target, task=task,
                                         hidden_dims=hidden, **vars(cfg)))
    frame = load_feature_frames(feature_paths)
    kwargs = dict(hidden_dims=hidden, train_cfg=cfg, seed=seed, feature_set=feature_set_of_columns(frame.columns),
                  task=task)
    if target is not None:
        flip, report = search_label_flip(frame, target, **kwargs)
    else:
        report = run_label_flip_baseline(frame, flip, **kwargs)
    click.echo(format_eval_report(report))
    if results_path:
        write_results_table([report], results_path)
    return EXIT_OK


@cli.command("defend")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--clean", "clean_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="feature CSV of clean benign rows")
@click.option("--poisoned", "poisoned_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="feature CSV of triggered rows")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--target-dim", type=click.Choice(["2", "3"]), default="2", show_default=True)
@click.option("--method", type=click.Choice(REDUCE_METHODS), default="pca", show_default=True)
@click.option("--max-points", type=int, default=4000, show_default=True)
@click.option("--seed", type=int, default=0, envvar=ENV_VAR_SEED, show_default=True)
@main_timer("defend")
def defend_command(model_path, clean_path, poisoned_path, out_dir, target_dim, method, max_points, seed):
    '''Activation clustering of the rows the model calls benign.'''
    log_resolved_config("defend", dict(model=model_path, clean=clean_path, poisoned=poisoned_path, out_dir=out_dir,
                                       target_dim=target_dim, method=method, max_points=max_points, seed=seed))
    model = load_model(model_path)
    featureSet = feature_set_for_width(model.input_width)
    columns = feature_columns(featureSet)
    clean = read_features(clean_path)
    poisoned = read_features(poisoned_path)
    X = np.vstack([clean[columns].to_numpy(dtype=float), poisoned[columns].to_numpy(dtype=float)])
    tags = np.array([TAG_BENIGN] * len(clean) + [TAG_TRIGGERED] * len(poisoned))
    rows, rowTags = select_benign_predicted(model, X, tags)
    analysis = analyze(model, rows, rowTags, seed=seed, target_dim=int(target_dim), method=method,
                       max_points=max_points)
    os.makedirs(out_dir, exist_ok=True)
    text = format_cluster_report(analysis)
    click.echo(text)
    write_report(text, os.path.join(out_dir, "clusters.txt"))
    write_cluster_points(analysis, os.path.join(out_dir, "cluster_points.csv"))
    return EXIT_OK


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# EXPERIMENTS
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

@cli.command("sweep")
@click.option("--config", "config_path", default=FILEPATH_CONFIG_USER, show_default=True,
              type=click.Path(dir_okay=False), help="INI file overriding the shipped defaults")
@click.option("--out", "output_path", required=True, type=click.Path(dir_okay=False), help="results CSV")
@click.option("--workers", type=int, default=None, help="overrides [sweep] workers")
@main_timer("sweep")
def sweep_command(config_path, output_path, workers):
    '''Grid of full experiment runs.'''
    print_starting_banner("pcapbd sweep")
    conf = get_config_in_dot_notation(templateFilename=FILEPATH_CONFIG_TEMPLATE_ORIGINAL, configFilename=config_path)
    if workers is not None:
        conf.sweep["workers"] = workers
    expCfg = ExperimentConfig.from_conf(conf)
    for section in ("trigger", "train", "experiment", "sweep", "synthetic"):
        log_resolved_config(section, conf.get(section, {}))
    reports = run_sweep(expCfg)
    write_results_table(reports, output_path)
    for report in reports:
        click.echo(format_eval_report(report))
    return EXIT_OK


def main(argv=None):
    '''
    Run one command and return its exit code.
    '''
    try:
        rv = cli.main(args=argv, prog_name="pcapbd", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE_ERROR
    except click.ClickException as e:
        e.show()
        return EXIT_DOMAIN_ERROR
    except click.Abort:
        error("Aborted")
        return EXIT_DOMAIN_ERROR
    except PcapbdError as e:
        error(f"{type(e).__name__}: {e}")
        return EXIT_DOMAIN_ERROR
    except OSError as e:
        error(str(e))
        return EXIT_DOMAIN_ERROR
    return rv if isinstance(rv, int) else EXIT_OK


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
