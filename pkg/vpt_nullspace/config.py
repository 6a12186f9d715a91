# -*- coding: utf-8 -*-

import os
import re
import logging
import logging.config
import logging.handlers
import warnings

from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

import yaml

warnings.filterwarnings("ignore", category=DeprecationWarning)

from .errors import ConfigError
from .utils import str2bool

# they must be in a form ${VARIABLE_NAME}
ENVNAME_PATTERN = "[A-Z0-9_]+"
ENVPARAM_PATTERN = r"\$\{%s\}" % ENVNAME_PATTERN

DEBUG = str2bool(os.getenv("VPTNS_DEBUG", "False"))
ANSI_COLORS = not str2bool(os.getenv("VPTNS_NO_ANSI", "False"))
TRACEBACK = str2bool(os.getenv("VPTNS_TRACEBACK", "False"))
CONFIG_FILE = os.getenv("VPTNS_CONFIG", None)

VPTNS_HOME = os.getenv("VPTNS_HOME", os.path.join(os.path.expanduser("~"), ".vpt-nullspace"))

env_variables = {
    "VPTNS_HOME": VPTNS_HOME,
    "VPTNS_CONFIG": CONFIG_FILE,
    "VPTNS_DEBUG": DEBUG,
    "VPTNS_TRACEBACK": TRACEBACK,
    "VPTNS_NO_ANSI": not ANSI_COLORS,
}


@dataclass(frozen=True)
class ConfigKey:
    name: str
    default: Any
    kind: str
    help: str
    choices: Tuple[str, ...] = ()


# the reference table of every configuration key
DEFAULTS: List[ConfigKey] = [
    ConfigKey("stream.image_size", 16, "int", "Side of the square synthetic images in pixels."),
    ConfigKey("stream.patch_size", 4, "int", "Side of the square patches; must divide the image size."),
    ConfigKey("stream.tasks", 5, "int", "Number of tasks in the stream."),
    ConfigKey("stream.classes_per_task", 2, "int", "Classes per task, disjoint across tasks."),
    ConfigKey("stream.train_per_class", 100, "int", "Training samples per class."),
    ConfigKey("stream.test_per_class", 100, "int", "Test samples per class."),
    ConfigKey("stream.base_scale", 1.0, "float", "Per-pixel RMS of the base image shared by every class."),
    ConfigKey("stream.prototype_scale", 0.2, "float", "Per-pixel RMS of the tiled class patterns."),
    ConfigKey("stream.noise_scale", 0.2, "float", "Standard deviation of the per-pixel Gaussian noise."),
    ConfigKey("stream.pretext_classes", 10, "int", "Classes of the pretext set used to pretrain the backbone."),
    ConfigKey("stream.pretext_per_class", 50, "int", "Samples per pretext class."),
    ConfigKey("model.dim", 32, "int", "Token dimension D."),
    ConfigKey("model.heads", 4, "int", "Attention heads H; must divide D."),
    ConfigKey("model.layers", 2, "int", "Prompted transformer layers L."),
    ConfigKey("model.prompts", 4, "int", "Prompts per layer M."),
    ConfigKey("model.mlp_ratio", 4, "int", "Hidden width of the MLP as a multiple of D."),
    ConfigKey("model.ln_eps", 1e-6, "float", "Epsilon inside the LayerNorm standard deviation."),
    ConfigKey("model.prompt_scale", 0.1, "float", "Standard deviation of the initial prompts."),
    ConfigKey("pretrain.enabled", True, "bool", "Pretrain the backbone on the pretext classes before freezing it."),
    ConfigKey("pretrain.epochs", 3, "int", "Pretraining epochs."),
    ConfigKey("pretrain.lr", 1e-3, "float", "Pretraining learning rate (Adam)."),
    ConfigKey("pretrain.batch_size", 32, "int", "Pretraining batch size."),
    ConfigKey("train.epochs", 20, "int", "Epochs per task."),
    ConfigKey("train.batch_size", 32, "int", "Batch size."),
    ConfigKey("train.optimizer", "sgd", "choice", "Optimizer producing the candidate prompt update.", ("sgd", "adam")),
    ConfigKey("train.lr", 0.1, "float", "Prompt learning rate."),
    ConfigKey("train.head_lr", 0.01, "float", "Classifier head learning rate."),
    ConfigKey("train.weight_decay", 0.0, "float", "Weight decay added to the gradients before projection."),
    ConfigKey("train.betas", [0.9, 0.999], "floats", "Adam moment decay rates."),
    ConfigKey("train.lr_milestones", [0.5, 0.8], "floats", "Fractions of the epochs at which the learning rates decay."),
    ConfigKey("train.lr_gamma", 0.1, "float", "Learning-rate decay factor at every milestone."),
    ConfigKey("train.temperature", 10.0, "float", "Logit scale of the cross-entropy."),
    ConfigKey("train.collect_subsample", 0, "int", "Samples per task used for the covariances; 0 uses the full set."),
    ConfigKey("method.names", ["seq", "nsp2"], "strs", "Methods to run, in order."),
    ConfigKey("method.eta1", 1.0, "float", "Projection weight of the D x D projector."),
    ConfigKey("method.eta2", 1.0, "float", "Projection weight of the M x M projector."),
    ConfigKey("method.nullity", "adaptive", "choice", "Nullity selection rule.", ("adaptive", "gamma", "exact")),
    ConfigKey("method.gamma", 10.0, "float", "Multiple of the smallest singular value for the gamma rule."),
    ConfigKey("method.lnloss_coeff", 1.0, "float", "Weight of the prompt distribution loss."),
    ConfigKey("run.seeds", [0, 1, 2], "ints", "Seeds; every method runs once per seed."),
    ConfigKey("run.output_dir", "results", "str", "Output directory, relative to the configuration file."),
    ConfigKey("audit.residual_tol", 1e-8, "float", "Relative condition residual above which an update is reported."),
]

KEYS: Dict[str, ConfigKey] = {k.name: k for k in DEFAULTS}

# fallbacks for the tool variables that are not set in the environment
ENV = {k: str(v) for k, v in env_variables.items() if v is not None}


def replace_env_variable(value, line=None):
    """
    Replace all environment variables in a string provided in `value` parameter
    with values of variables in the environment.
    """
    params = list(set(re.findall("(%s)" % ENVPARAM_PATTERN, value)))
    for k in params:
        env_value = os.environ.get(k[2:-1], ENV.get(k[2:-1]))
        if env_value is None:
            raise ConfigError(f"The environment variable {k} does not exist!", line=line)
        value = value.replace(k, env_value)
    return value


def get_dir_path(config_dir, path, base_dir=None, check=False):
    """
    Return the directory for the path specified.
    """
    d = os.path.normpath((((config_dir if base_dir is None else base_dir) + "/") if path[0] != "/" else "") + path)
    if check and not os.path.exists(d):
        raise ConfigError(f"The directory {d} does not exist!")
    return d


def _scalar(key: ConfigKey, kind: str, value, line):
    try:
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if kind == "bool":
            if isinstance(value, bool):
                return value
            if str(value).lower() not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(value)
            return str2bool(str(value))
        value = str(value).strip()
        if kind == "choice" and value not in key.choices:
            raise ConfigError(f"The value '{value}' is not one of {', '.join(key.choices)}", key=key.name, line=line)
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"The value '{value}' is not a valid {kind}", key=key.name, line=line)


def coerce(name: str, value, line=None):
    """
    Convert a raw value (a string or a YAML-typed value) to the type of the key.
    """
    key = KEYS.get(name)
    if key is None:
        raise ConfigError(f"Unknown configuration key '{name}'", key=name, line=line)
    if isinstance(value, str):
        value = replace_env_variable(value.strip(), line)
        if key.kind in ("ints", "floats", "strs") and not value.startswith("["):
            value = [v for v in value.split(",") if v.strip()]
        else:
            try:
                value = yaml.safe_load(value) if value else value
            except yaml.YAMLError as e:
                raise ConfigError(f"The value cannot be parsed: {e}", key=name, line=line)
    if key.kind in ("ints", "floats", "strs"):
        items = value if isinstance(value, (list, tuple)) else [value]
        kind = dict(ints="int", floats="float", strs="str")[key.kind]
        parsed = [_scalar(key, kind, v, line) for v in items]
        if not parsed:
            raise ConfigError("The list must not be empty", key=name, line=line)
        return parsed
    if value is None or value == "":
        raise ConfigError("Missing value", key=name, line=line)
    return _scalar(key, key.kind, value, line)


def _flatten(data, prefix=""):
    for k, v in data.items():
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, name + ".")
        else:
            yield name, v


def read_config_lines(config_file, sep="=", comment="#"):
    """
    Read `key = value` pairs from the configuration file. Returns a dict of key -> (raw value, line).
    YAML files are flattened to dotted keys.
    """
    if not os.path.exists(config_file):
        raise ConfigError(f"The configuration file {config_file} does not exist!")
    entries = {}
    with open(config_file, "rt", encoding="utf-8") as f:
        text = f.read()

    if config_file.endswith((".yaml", ".yml")):
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Error when reading the configuration file {config_file}: {str(e)}")
        if not isinstance(data, dict):
            raise ConfigError(f"The configuration file {config_file} must contain a mapping.")
        for name, value in _flatten(data):
            entries[name] = (value, None)
        return entries

    for inx, line in enumerate(text.splitlines(), start=1):
        l = line.split(comment, 1)[0].strip()
        if not l:
            continue
        if sep not in l:
            raise ConfigError(f"Expected 'key {sep} value', got '{l}'", line=inx)
        key, value = l.split(sep, 1)
        key = key.strip()
        if key in entries:
            raise ConfigError("The key is defined twice", key=key, line=inx)
        entries[key] = (value.strip(), inx)
    return entries


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


class RunConfig:
    """
    The effective run configuration: every key of `DEFAULTS` with its value from the configuration
    file or its default.
    """

    def __init__(self, values: Dict[str, Any] = None, config_file: str = None) -> None:
        self.config_file = os.path.realpath(config_file) if config_file else None
        self.config_dir = os.path.dirname(self.config_file) if self.config_file else os.getcwd()
        self.values = {k.name: k.default for k in DEFAULTS}
        for name, value in (values or {}).items():
            self.values[name] = coerce(name, value)

    @classmethod
    def from_file(cls, config_file: str) -> "RunConfig":
        config = cls(config_file=config_file)
        for name, (value, line) in read_config_lines(config_file).items():
            config.values[name] = coerce(name, value, line)
        return config

    def __call__(self, name: str):
        if name not in self.values:
            raise ConfigError(f"Unknown configuration key '{name}'", key=name)
        return self.values[name]

    def override(self, **values) -> "RunConfig":
        """
        A copy with some keys replaced; keys use `_` in place of `.` (e.g. `method__eta1`).
        """
        config = RunConfig(config_file=self.config_file)
        config.values = dict(self.values)
        for name, value in values.items():
            name = name.replace("__", ".")
            config.values[name] = coerce(name, value)
        return config

    @property
    def output_dir(self) -> str:
        return get_dir_path(self.config_dir, self("run.output_dir"))

    @property
    def seeds(self) -> List[int]:
        return list(self("run.seeds"))

    def echo(self) -> str:
        """
        The full effective configuration in the `key = value` format; reading it back reproduces
        the configuration.
        """
        lines = [f"{k.name} = {format_value(self.values[k.name])}" for k in DEFAULTS]
        return "\n".join(lines) + "\n"

    def stream_spec(self, seed: int = 0):
        from .harness.stream import SyntheticTaskSpec

        return SyntheticTaskSpec(
            image_size=self("stream.image_size"),
            patch_size=self("stream.patch_size"),
            classes_per_task=self("stream.classes_per_task"),
            tasks=self("stream.tasks"),
            train_per_class=self("stream.train_per_class"),
            test_per_class=self("stream.test_per_class"),
            base_scale=self("stream.base_scale"),
            prototype_scale=self("stream.prototype_scale"),
            noise_scale=self("stream.noise_scale"),
            pretext_classes=self("stream.pretext_classes"),
            pretext_per_class=self("stream.pretext_per_class"),
            seed=seed,
        )

    def model_spec(self):
        from .harness.experiment import ModelSpec

        dim, heads = self("model.dim"), self("model.heads")
        if heads < 1 or dim % heads != 0:
            raise ConfigError(f"The token dimension {dim} is not divisible by {heads} heads.", key="model.heads")
        if self("model.prompts") < 1 or self("model.layers") < 1:
            raise ConfigError("The model needs at least one layer and one prompt per layer.", key="model.prompts")
        return ModelSpec(
            dim=dim,
            heads=heads,
            layers=self("model.layers"),
            prompts=self("model.prompts"),
            mlp_ratio=self("model.mlp_ratio"),
            ln_eps=self("model.ln_eps"),
            prompt_scale=self("model.prompt_scale"),
        )

    def pretrain_spec(self):
        from .harness.trainer import PretrainSpec

        return PretrainSpec(
            enabled=self("pretrain.enabled"),
            epochs=self("pretrain.epochs"),
            lr=self("pretrain.lr"),
            batch_size=self("pretrain.batch_size"),
            temperature=self("train.temperature"),
        )

    def method_config(self, name: str, eta1: float = None, eta2: float = None):
        from .harness.trainer import MethodConfig
        from .projector import NullityPolicy

        if self("method.nullity") == "gamma" and self("method.gamma") < 1:
            raise ConfigError(f"The gamma multiple must be at least 1, got {self('method.gamma')}.", key="method.gamma")
        betas = self("train.betas")
        if len(betas) != 2:
            raise ConfigError(f"Adam needs two decay rates, got {len(betas)}.", key="train.betas")
        return MethodConfig(
            method=name,
            eta1=self("method.eta1") if eta1 is None else eta1,
            eta2=self("method.eta2") if eta2 is None else eta2,
            nullity=NullityPolicy(self("method.nullity"), self("method.gamma")),
            lnloss_coeff=self("method.lnloss_coeff"),
            optimizer=self("train.optimizer"),
            lr=self("train.lr"),
            head_lr=self("train.head_lr"),
            weight_decay=self("train.weight_decay"),
            betas=tuple(betas),
            epochs=self("train.epochs"),
            batch_size=self("train.batch_size"),
            lr_milestones=tuple(self("train.lr_milestones")),
            lr_gamma=self("train.lr_gamma"),
            temperature=self("train.temperature"),
            collect_subsample=self("train.collect_subsample"),
        )

    def methods(self):
        names = self("method.names")
        if len(set(names)) != len(names):
            raise ConfigError("A method is listed twice", key="method.names")
        return [(name, self.method_config(name)) for name in names]


class CustomFormatter(logging.Formatter):
    grey = "\x1b[38;20m"
    yellow = "\x1b[33;20m"
    red = "\x1b[31;20m"
    bold_red = "\x1b[31;1m"
    reset = "\x1b[0m"
    format_header = "%(asctime)s [%(name)-14.14s] "
    format_msg = "[%(levelname)-1.1s] %(message)s"

    FORMATS = {
        logging.DEBUG: format_header + grey + format_msg + reset,
        logging.INFO: format_header + grey + format_msg + reset,
        logging.WARNING: format_header + yellow + format_msg + reset,
        logging.ERROR: format_header + red + format_msg + reset,
        logging.CRITICAL: format_header + bold_red + format_msg + reset,
    }

    def format(self, record):
        log_fmt = self.FORMATS.get(record.levelno)
        formatter = logging.Formatter(log_fmt)
        return formatter.format(record)


traceback_manager = logging.Manager(logging.RootLogger(logging.INFO))
traceback_handler = None


def init_logging(logs_dir, command_name, handlers=["file", "console"]):
    """
    Initialize the logging, set the log level and logging directory.
    """
    log_level = "DEBUG" if DEBUG else "INFO"
    os.makedirs(logs_dir, exist_ok=True)

    logging_dict = {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "standard": {"format": CustomFormatter.format_header + CustomFormatter.format_msg},
            "colored": {"()": CustomFormatter},
        },
        "handlers": {
            "console": {
                "formatter": "colored" if ANSI_COLORS else "standard",
                "class": "logging.StreamHandler",
                "stream": "ext://sys.stderr",
            },
            "file": {
                "formatter": "standard",
                "class": "logging.handlers.TimedRotatingFileHandler",
                "filename": f"{logs_dir}/vptns-{command_name}.log",
                "when": "midnight",
                "interval": 1,
                "backupCount": 30,
            },
        },
        "loggers": {
            "": {  # all loggers
                "handlers": handlers,
                "level": f"{log_level}",
                "propagate": False,
            }
        },
    }

    logging.config.dictConfig(logging_dict)

    # traceback logs configuration
    if TRACEBACK:
        global traceback_handler
        traceback_handler = logging.handlers.TimedRotatingFileHandler(
            f"{logs_dir}/vptns-{command_name}-traceback.log",
            when=logging_dict["handlers"]["file"]["when"],
            interval=logging_dict["handlers"]["file"]["interval"],
            backupCount=logging_dict["handlers"]["file"]["backupCount"],
        )
        formatter = logging.Formatter(logging_dict["formatters"]["standard"]["format"])
        traceback_handler.setFormatter(formatter)


def get_logger(name):
    """
    Return a logger proxy that will forward the log messages to the logger with the provided name.
    """

    class LoggingProxy:
        def __init__(self, name):
            self.log = logging.getLogger(name)
            if TRACEBACK and traceback_handler is not None:
                self.traceback = traceback_manager.getLogger(name)
                self.traceback.addHandler(traceback_handler)
            else:
                self.traceback = None

        def info(self, msg, *args, **kwargs):
            self.log.info(msg, *args, **kwargs)

        def warning(self, msg, *args, **kwargs):
            self.log.warning(msg, *args, **kwargs)

        def error(self, msg, *args, **kwargs):
            self.log.error(msg, *args, **kwargs)
            if self.traceback is not None:
                kwargs["exc_info"] = True
                self.traceback.error(msg, *args, **kwargs)

        def debug(self, msg, *args, **kwargs):
            self.log.log(logging.DEBUG, msg, *args, **kwargs)

    return LoggingProxy(name)
