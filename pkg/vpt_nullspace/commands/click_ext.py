# -*- coding: utf-8 -*-

import os
import sys
import traceback

import click
from click import Option

from .. import config
from ..config import init_logging
from ..errors import CheckFailure, ConfigError
from ..utils import format_str_color, bcolors

from vpt_nullspace import __version__ as version

# exit codes of the commands
EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2
EXIT_CHECK_FAILURE = 3


class CoreCommandGroup(click.core.Group):
    """
    The `CoreCommandGroup` is the main entry point for the CLI. It initializes the global variables
    and handles the global options such as `--no-ansi` and `--debug`. Errors are printed to the
    standard error and mapped to the exit codes.
    """

    def invoke(self, ctx):
        # retrieve the global options
        config.ANSI_COLORS = not ctx.params.pop("no_ansi", not config.ANSI_COLORS)
        config.DEBUG = ctx.params.pop("debug", config.DEBUG)
        config.TRACEBACK = ctx.params.pop("traceback", config.TRACEBACK)

        # pylint: disable=broad-except
        try:
            return click.core.Group.invoke(self, ctx)
        except click.exceptions.Exit as exception:
            sys.exit(exception.exit_code)
        except click.core.ClickException as exception:
            raise exception
        except Exception as exception:
            sys.stderr.write(
                format_str_color(
                    f"ERROR: {str(exception)}\n",
                    bcolors.ERROR,
                    not config.ANSI_COLORS,
                )
            )
            if config.TRACEBACK:
                sys.stderr.write("---\n")
                traceback.print_exc()
                sys.stderr.write("---\n")

            if isinstance(exception, ConfigError):
                sys.exit(EXIT_CONFIG_ERROR)
            if isinstance(exception, CheckFailure):
                sys.exit(EXIT_CHECK_FAILURE)
            sys.exit(EXIT_RUNTIME_ERROR)


class BaseCommand(click.core.Command):
    """
    The `BaseCommand` is the base class for all commands. It initializes the logger.
    """

    def __init__(self, *args, **kwargs):
        self.log_handlers = kwargs.pop("log_handlers", None) or ["file", "console"]
        super().__init__(*args, **kwargs)

    def init_logging(self, command_path):
        name = "-".join(command_path.split(" ")[1:])
        logs_dir = os.path.join(config.VPTNS_HOME, "logs", name)
        init_logging(logs_dir, name, handlers=self.log_handlers)

    def command_run(self, ctx):
        self.init_logging(ctx.command_path)
        self.log = config.get_logger(ctx.command.name)
        self.log.info(f"Null-space prompt tuning, vpt-nullspace v{version}")

    def invoke(self, ctx):
        self.command_run(ctx)
        return super().invoke(ctx)


class BaseCommandConfig(BaseCommand):
    """
    The `BaseCommandConfig` is the base class for all commands that require the run configuration.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.params.insert(
            0,
            Option(
                ("-c", "--config"),
                metavar="<file>",
                required=config.CONFIG_FILE is None,
                help="Run configuration file (key = value lines or YAML)",
                default=config.CONFIG_FILE,
            ),
        )
        self.log = None

    def command_run(self, ctx):
        super().command_run(ctx)
        config_file = ctx.params.pop("config")
        _config = config.RunConfig.from_file(config_file)
        self.log.info(f"The configuration loaded from {_config.config_file}")
        ctx.params["config"] = _config
        ctx.params["log"] = self.log
