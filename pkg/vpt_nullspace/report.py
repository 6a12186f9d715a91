# -*- coding: utf-8 -*-

"""
Result files of a run directory: summary and aggregate tables, per-run detail CSVs and a YAML
report per run. Every CSV has a fixed header and formats floats with `repr`.
"""

import csv
import logging
import os
import re

import yaml

from .utils import format_float

log = logging.getLogger("report")

SUMMARY_HEADER = ["method", "seed", "final_avg_accuracy", "final_avg_forgetting"]
SWEEP_HEADER = ["eta", "seed", "final_avg_accuracy", "final_avg_forgetting"]
AGGREGATE_HEADER = [
    "method",
    "runs",
    "accuracy_mean",
    "accuracy_std",
    "forgetting_mean",
    "forgetting_std",
    "task1_loss_increase_mean",
]
RESIDUALS_HEADER = ["task", "layer", "residual_omega1", "residual_omega2"]
LOSS_DRIFT_HEADER = ["after_task", "task", "loss"]
SPECTRUM_HEADER = ["task", "layer", "covariance", "index", "singular_value", "chosen_nullity"]

PARTIAL_FILE = "PARTIAL"
ECHO_FILE = "config.echo"


def _cell(value):
    if value is None or isinstance(value, float):
        return format_float(value)
    return str(value)


def write_csv(path, header, rows, mode="w"):
    with open(path, mode, newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        if header is not None:
            writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def run_prefix(label, seed):
    return re.sub(r"[^A-Za-z0-9_.=-]", "_", f"{label}_seed{seed}")


def accuracy_rows(record):
    for j, row in enumerate(record.accuracy.rows()):
        yield [j + 1] + row


def write_run_details(output_dir, record, config_echo):
    """
    Write the accuracy matrix, residuals, loss drift and spectrum CSVs and the YAML report of one
    run. Task and layer numbers in the files are 1-based and 0-based respectively.
    """
    prefix = os.path.join(output_dir, run_prefix(record.label, record.seed))
    T = record.accuracy.tasks
    write_csv(f"{prefix}_accuracy.csv", ["after_task"] + [f"task_{i + 1}" for i in range(T)], accuracy_rows(record))
    write_csv(
        f"{prefix}_residuals.csv",
        RESIDUALS_HEADER,
        ([task + 1, layer, r1, r2] for (task, layer), (r1, r2) in sorted(record.residuals.items())),
    )
    write_csv(
        f"{prefix}_loss_drift.csv",
        LOSS_DRIFT_HEADER,
        ([after + 1, task + 1, loss] for after, task, loss in record.loss_drift),
    )
    write_csv(
        f"{prefix}_spectrum.csv",
        SPECTRUM_HEADER,
        (
            [r["task"] + 1, r["layer"], r["covariance"], r["index"], r["singular_value"], r["chosen_nullity"]]
            for r in record.spectrum.rows()
        ),
    )

    r1, r2 = record.max_residuals()
    report = {
        "method": record.label,
        "variant": record.method.method,
        "seed": record.seed,
        "final_avg_accuracy": record.final_accuracy,
        "final_avg_forgetting": record.final_forgetting,
        "accuracy_matrix": record.accuracy.rows(),
        "loss_drift": [dict(after_task=a + 1, task=t + 1, loss=l) for a, t, l in record.loss_drift],
        "max_residual_omega1": r1,
        "max_residual_omega2": r2,
        "zero_nullity": record.zero_nullity_warnings(),
        "backbone_fingerprint": record.fingerprint,
        "wall_clock_seconds": record.wall_clock,
        "config": config_echo,
    }
    with open(f"{prefix}_report.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump(report, f, sort_keys=False, default_flow_style=None)
    return prefix


class ReportWriter:
    """
    Owns the output directory of one command. The summary table is started fresh and grows by one
    row per finished run, so a failed command leaves every finished run on disk.
    """

    def __init__(self, output_dir, config_echo, summary_file="summary.csv", header=SUMMARY_HEADER):
        self.output_dir = output_dir
        self.config_echo = config_echo
        self.summary_path = os.path.join(output_dir, summary_file)
        self.header = header

    def start(self):
        os.makedirs(self.output_dir, exist_ok=True)
        partial = os.path.join(self.output_dir, PARTIAL_FILE)
        if os.path.exists(partial):
            os.remove(partial)
        with open(os.path.join(self.output_dir, ECHO_FILE), "w", encoding="utf-8") as f:
            f.write(self.config_echo)
        write_csv(self.summary_path, self.header, [])
        log.info(f"Writing results to {self.output_dir}")

    def add_run(self, record, key=None):
        """
        Write the detail files of `record` and append its summary row. `key` replaces the method
        label in the first column (the eta value of a sweep).
        """
        write_run_details(self.output_dir, record, self.config_echo)
        first = record.label if key is None else key
        write_csv(
            self.summary_path,
            None,
            [[first, record.seed, record.final_accuracy, record.final_forgetting]],
            mode="a",
        )

    def write_aggregate(self, summaries, file="aggregate.csv"):
        write_csv(
            os.path.join(self.output_dir, file),
            AGGREGATE_HEADER,
            (
                [
                    s.label,
                    s.runs,
                    s.accuracy_mean,
                    s.accuracy_std,
                    s.forgetting_mean,
                    s.forgetting_std,
                    s.loss_increase_mean,
                ]
                for s in summaries
            ),
        )

    def mark_partial(self, exception):
        os.makedirs(self.output_dir, exist_ok=True)
        with open(os.path.join(self.output_dir, PARTIAL_FILE), "w", encoding="utf-8") as f:
            f.write(f"{type(exception).__name__}: {exception}\n")
