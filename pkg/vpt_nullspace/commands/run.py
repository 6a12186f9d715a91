# -*- coding: utf-8 -*-

import click

from .. import config as cfg
from ..checks import run_checks
from ..errors import CheckFailure, ConfigError
from ..harness.experiment import run_experiment
from ..report import SWEEP_HEADER, ReportWriter
from ..table import Table
from ..utils import bcolors, format_float, format_str_color

from .click_ext import BaseCommand, BaseCommandConfig


def _fmt(_, v, e):
    return f"{v:.4f}" if v is not None else "-"


SUMMARY_TABLE = [
    {"name": "METHOD", "value": "{label}", "help": "Method label"},
    {"name": "RUNS", "value": "{runs}", "justify": "right", "help": "Number of seeds"},
    {"name": "ACC", "value": "{accuracy_mean}", "format": _fmt, "justify": "right", "help": "Final average accuracy, mean over seeds"},
    {"name": "ACC STD", "value": "{accuracy_std}", "format": _fmt, "justify": "right", "help": "Standard deviation of the accuracy"},
    {"name": "FGT", "value": "{forgetting_mean}", "format": _fmt, "justify": "right", "help": "Final average forgetting, mean over seeds"},
    {"name": "FGT STD", "value": "{forgetting_std}", "format": _fmt, "justify": "right", "help": "Standard deviation of the forgetting"},
    {"name": "T1 LOSS +", "value": "{loss_increase_mean}", "format": _fmt, "justify": "right", "help": "Increase of the task 1 training loss"},
]


def _experiment_specs(config):
    # everything that can fail on a bad configuration, before any output is written
    stream_spec = config.stream_spec()
    stream_spec.validate()
    return stream_spec, config.model_spec(), config.pretrain_spec()


def _audit(record, config, log):
    m = record.method
    if not m.flags.projects:
        return
    r1, r2 = record.max_residuals()
    log.info(f"{record.label} seed {record.seed}: max condition residuals {r1:.3e}, {r2:.3e}")
    tol = config("audit.residual_tol")
    exact = m.nullity.mode == "exact" and m.eta1 == 1.0 and m.eta2 == 1.0 and not m.flags.pgp
    if exact and max(r1, r2) > tol:
        log.warning(f"{record.label} seed {record.seed}: condition residual {max(r1, r2):.3e} exceeds {tol:.0e}")
    for w in record.zero_nullity_warnings():
        log.debug(f"{record.label} seed {record.seed}: {w}")


def _execute(config, log, methods, writer, silent, key=None):
    stream_spec, model_spec, pretrain = _experiment_specs(config)
    writer.start()

    def on_run(record):
        writer.add_run(record, key=key(record) if key else None)
        _audit(record, config, log)

    try:
        report = run_experiment(stream_spec, model_spec, pretrain, methods, config.seeds, on_run=on_run, silent=silent)
    except Exception as e:
        writer.mark_partial(e)
        log.error(f"The run failed, the results in {writer.output_dir} are partial: {str(e)}")
        raise
    writer.write_aggregate(report.summary())
    return report


@click.command(cls=BaseCommandConfig)
@click.option("-o", "--output", "output", metavar="<dir>", help="Output directory, overrides run.output_dir.")
@click.option("-s", "--silent", "silent", is_flag=True, default=False, help="Do not display progress bars.")
def run(config, log, output, silent):
    """
    Run every configured method for every seed and write the result files.
    """
    methods = config.methods()
    writer = ReportWriter(output or config.output_dir, config.echo())
    report = _execute(config, log, methods, writer, silent)
    Table(SUMMARY_TABLE).display([s.__dict__ for s in report.summary()])
    log.info(f"The results were written to {writer.output_dir}")


def parse_eta_grid(value):
    try:
        grid = [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"The eta grid '{value}' is not a list of numbers", key="--eta")
    if not grid:
        raise ConfigError("The eta grid is empty", key="--eta")
    for eta in grid:
        if not 0.0 <= eta <= 1.0:
            raise ConfigError(f"The eta value {eta} is outside of [0, 1]", key="--eta")
    return grid


@click.command(cls=BaseCommandConfig)
@click.option("--eta", "eta", metavar="<v1,v2,...>", required=True, help="Comma-separated projection weights in [0, 1].")
@click.option("-o", "--output", "output", metavar="<dir>", help="Output directory, overrides run.output_dir.")
@click.option("-s", "--silent", "silent", is_flag=True, default=False, help="Do not display progress bars.")
def sweep(config, log, eta, output, silent):
    """
    Run the full method with eta1 = eta2 = eta for every grid value and seed.
    """
    grid = parse_eta_grid(eta)
    methods = [(f"nsp2_eta{format_float(e)}", config.method_config("nsp2", eta1=e, eta2=e)) for e in grid]
    writer = ReportWriter(output or config.output_dir, config.echo(), summary_file="sweep.csv", header=SWEEP_HEADER)
    report = _execute(config, log, methods, writer, silent, key=lambda r: r.method.eta1)
    Table(SUMMARY_TABLE).display([s.__dict__ for s in report.summary()])


@click.command(cls=BaseCommand, log_handlers=["file"])
@click.option("--inject-fault", "inject_fault", is_flag=True, default=False, help="Perturb the D x D projector off the null space.")
@click.option("--seed", "seed", type=int, default=0, help="Seed of the random inputs.")
def check(inject_fault, seed):
    """
    Run the property suite and print the result of every property.
    """
    results = run_checks(inject_fault=inject_fault, seed=seed)

    def _status(_, v, e):
        return format_str_color(
            "PASS" if v else "FAIL", bcolors.OKGREEN if v else bcolors.ERROR, not cfg.ANSI_COLORS
        )

    table_def = [
        {"name": "PROPERTY", "value": "{name}"},
        {"name": "RESIDUAL", "value": "{value}", "format": lambda _, v, e: f"{v:.3e}", "justify": "right"},
        {"name": "TOLERANCE", "value": "{tolerance}", "format": lambda _, v, e: f"{v:.0e}", "justify": "right"},
        {"name": "RESULT", "value": "{passed}", "format": _status},
        {"name": "DESCRIPTION", "value": "{description}"},
    ]
    Table(table_def).display([dict(r.__dict__, passed=r.passed) for r in results])
    failures = [(r.name, r.value) for r in results if not r.passed]
    if failures:
        raise CheckFailure(failures)


@click.command(name="config-keys", cls=BaseCommand, log_handlers=["file"])
def config_keys():
    """
    Print the reference table of the configuration keys.
    """
    table_def = [
        {"name": "KEY", "value": "{name}"},
        {"name": "DEFAULT", "value": "{default}"},
        {"name": "DESCRIPTION", "value": "{help}"},
    ]
    Table(table_def).display(
        [dict(name=k.name, default=cfg.format_value(k.default), help=k.help) for k in cfg.DEFAULTS]
    )
