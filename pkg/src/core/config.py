import json
import os
from dataclasses import dataclass, fields
from enum import Enum

from src.core.errors import ConfigError
from src.components.optim import MomentumPolicy
from src.components.selection import SelectionMode


class Strategy(str, Enum):
    SGD_BASELINE = "sgd-baseline"
    RANDOM = "random"
    TOURNAMENT = "tournament"
    LEXICASE = "lexicase"


MODELS = ("mlp-small", "conv-small")
DATASETS = ("two-moons", "gaussian-blobs", "idx", "cifar10", "csv")
BUDGETS = ("explicit", "parity", "plus-one")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

# Training defaults: momentum 0.9, lr 0.1
# cosine-annealed, batch 128, population 4, Reset momentum, three seeds.
DEFAULTS = {
    "seed": 0,
    "population": 4,
    "generations": None,
    "epochs": 10,
    "budget": "parity",
    "strategy": "lexicase",
    "selection_mode": "modified",
    "momentum_policy": "reset",
    "momentum": 0.9,
    "weight_decay": 0.0,
    "lr": 0.1,
    "lr_min": 0.0,
    "batch_size": 128,
    "selection_cases": None,
    "selection_window": 64,
    "trace_cap": 32,
    "record_train_accuracy": True,
    "workers": 1,
    "checkpoint_every": 1,
    "model": "mlp-small",
    "hidden": 32,
    "conv_channels": [8, 16],
    "dataset": "two-moons",
    "dataset_path": None,
    "labels_path": None,
    "test_path": None,
    "test_labels_path": None,
    "n_train": 400,
    "n_test": 200,
    "classes": 2,
    "noise": 0.1,
    "data_seed": 0,
    "augment": None,
    "crop_padding": 4,
    "hflip_prob": None,
    "strategies": ["sgd-baseline", "random", "tournament", "lexicase"],
    "seeds": [0, 1, 2],
    "sizes": [2, 4, 6, 8],
    "momentum_policies": ["none", "reset", "inherit"],
    "profile_layer": None,
    "profile_samples": 100,
    "profile_bins": 50,
    "log_level": "INFO",
}

# Maps config strings to the enums the engine works with
CHOICES = {
    "strategy": Strategy,
    "selection_mode": SelectionMode,
    "momentum_policy": MomentumPolicy,
}


class Config:
    """
    Loads and manages run configuration from a flat JSON file
    """
    def __init__(self, config_path=None, values=None):
        self.config_path = config_path
        self.config = {}
        if config_path is not None:
            self.load_config()
        if values:
            self.config.update(values)
        self.check_keys()

    def resolve_path(self):
        """Resolve the config path against the working directory, then its parent"""
        if os.path.isabs(self.config_path):
            return self.config_path
        if os.path.exists(self.config_path):
            return self.config_path
        if os.path.exists(os.path.join("..", self.config_path)):
            return os.path.join("..", self.config_path)
        raise ConfigError(f"Config file not found: {self.config_path}")

    def load_config(self):
        """Load configuration from JSON file"""
        path = self.resolve_path()
        try:
            with open(path, "r") as f:
                loaded = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config file {path} must hold a flat JSON object")
        self.config = loaded

    def check_keys(self):
        for key in self.config:
            if key not in DEFAULTS:
                raise ConfigError(f"Unknown config key: {key!r}", key=key)

    def get(self, key, default=None):
        """Get a configuration value by key"""
        if key in self.config:
            return self.config[key]
        if default is not None:
            return default
        return DEFAULTS.get(key)

    def __getitem__(self, key):
        """Allow dictionary-like access to config values"""
        return self.get(key)

    def as_dict(self):
        """Every key with file values layered over defaults"""
        merged = dict(DEFAULTS)
        merged.update(self.config)
        return merged


def parse_override(text):
    """
    Parse a ``key=value`` override. The value is read as JSON when it can
    be, otherwise kept as a plain string.
    """
    if "=" not in text:
        raise ConfigError(f"Override must look like key=value: {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _int(key, value, minimum=None, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}", key=key)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}", key=key)
    return value


def _float(key, value, low=None, high=None, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}", key=key)
    value = float(value)
    if low is not None and value < low:
        raise ConfigError(f"{key} must be >= {low}, got {value}", key=key)
    if high is not None and value > high:
        raise ConfigError(f"{key} must be <= {high}, got {value}", key=key)
    return value


def _choice(key, value, options):
    if value not in options:
        raise ConfigError(f"{key} must be one of {list(options)}, got {value!r}", key=key)
    return value


def _enum(key, value):
    enum_type = CHOICES[key]
    try:
        return enum_type(value)
    except ValueError:
        options = [member.value for member in enum_type]
        raise ConfigError(f"{key} must be one of {options}, got {value!r}", key=key) from None


def _int_list(key, value, minimum=None):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} must be a non-empty list", key=key)
    return tuple(_int(key, item, minimum) for item in value)


def _choice_list(key, choice_key, value):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} must be a non-empty list", key=key)
    try:
        return tuple(_enum(choice_key, item).value for item in value)
    except ConfigError as e:
        raise ConfigError(f"{key}: {e}", key=key) from None


def _optional_str(key, value):
    if value is not None and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string path, got {value!r}", key=key)
    return value


@dataclass(frozen=True)
class RunConfig:
    """Validated, immutable view of one experiment's configuration"""
    seed: int
    population: int
    generations: object
    epochs: int
    budget: str
    strategy: Strategy
    selection_mode: SelectionMode
    momentum_policy: MomentumPolicy
    momentum: float
    weight_decay: float
    lr: float
    lr_min: float
    batch_size: int
    selection_cases: object
    selection_window: int
    trace_cap: int
    record_train_accuracy: bool
    workers: int
    checkpoint_every: int
    model: str
    hidden: int
    conv_channels: tuple
    dataset: str
    dataset_path: object
    labels_path: object
    test_path: object
    test_labels_path: object
    n_train: int
    n_test: int
    classes: int
    noise: float
    data_seed: int
    augment: object
    crop_padding: int
    hflip_prob: object
    strategies: tuple
    seeds: tuple
    sizes: tuple
    momentum_policies: tuple
    profile_layer: object
    profile_samples: int
    profile_bins: int
    log_level: str

    @classmethod
    def from_config(cls, config):
        return cls.from_dict(config.as_dict())

    @classmethod
    def from_dict(cls, raw):
        for key in raw:
            if key not in DEFAULTS:
                raise ConfigError(f"Unknown config key: {key!r}", key=key)
        values = dict(DEFAULTS)
        values.update(raw)

        strategy = _enum("strategy", values["strategy"])
        population = _int("population", values["population"], 1)

        augment = values["augment"]
        if augment is not None and not isinstance(augment, bool):
            raise ConfigError(f"augment must be true, false or null, got {augment!r}", key="augment")
        record = values["record_train_accuracy"]
        if not isinstance(record, bool):
            raise ConfigError("record_train_accuracy must be true or false", key="record_train_accuracy")
        lr = _float("lr", values["lr"], 0.0)
        lr_min = _float("lr_min", values["lr_min"], 0.0)
        if lr_min > lr:
            raise ConfigError(f"lr_min ({lr_min}) must not exceed lr ({lr})", key="lr_min")
        strategies = _choice_list("strategies", "strategy", values["strategies"])
        momentum_policies = _choice_list("momentum_policies", "momentum_policy", values["momentum_policies"])
        log_level = values["log_level"]
        if not isinstance(log_level, str) or log_level.upper() not in LOG_LEVELS:
            raise ConfigError(f"log_level must be one of {list(LOG_LEVELS)}, got {log_level!r}", key="log_level")

        return cls(
            seed=_int("seed", values["seed"], 0),
            population=population,
            generations=_int("generations", values["generations"], 0, allow_none=True),
            epochs=_int("epochs", values["epochs"], 0),
            budget=_choice("budget", values["budget"], BUDGETS),
            strategy=strategy,
            selection_mode=_enum("selection_mode", values["selection_mode"]),
            momentum_policy=_enum("momentum_policy", values["momentum_policy"]),
            momentum=_float("momentum", values["momentum"], 0.0, 0.999999),
            weight_decay=_float("weight_decay", values["weight_decay"], 0.0),
            lr=lr,
            lr_min=lr_min,
            batch_size=_int("batch_size", values["batch_size"], 1),
            selection_cases=_int("selection_cases", values["selection_cases"], 1, allow_none=True),
            selection_window=_int("selection_window", values["selection_window"], 1),
            trace_cap=_int("trace_cap", values["trace_cap"], 0),
            record_train_accuracy=record,
            workers=_int("workers", values["workers"], 1),
            checkpoint_every=_int("checkpoint_every", values["checkpoint_every"], 1),
            model=_choice("model", values["model"], MODELS),
            hidden=_int("hidden", values["hidden"], 1),
            conv_channels=_int_list("conv_channels", values["conv_channels"], 1),
            dataset=_choice("dataset", values["dataset"], DATASETS),
            dataset_path=_optional_str("dataset_path", values["dataset_path"]),
            labels_path=_optional_str("labels_path", values["labels_path"]),
            test_path=_optional_str("test_path", values["test_path"]),
            test_labels_path=_optional_str("test_labels_path", values["test_labels_path"]),
            n_train=_int("n_train", values["n_train"], 1),
            n_test=_int("n_test", values["n_test"], 0),
            classes=_int("classes", values["classes"], 2),
            noise=_float("noise", values["noise"], 0.0),
            data_seed=_int("data_seed", values["data_seed"], 0),
            augment=augment,
            crop_padding=_int("crop_padding", values["crop_padding"], 0),
            hflip_prob=_float("hflip_prob", values["hflip_prob"], 0.0, 1.0, allow_none=True),
            strategies=strategies,
            seeds=_int_list("seeds", values["seeds"], 0),
            sizes=_int_list("sizes", values["sizes"], 1),
            momentum_policies=momentum_policies,
            profile_layer=_int("profile_layer", values["profile_layer"], 0, allow_none=True),
            profile_samples=_int("profile_samples", values["profile_samples"], 1),
            profile_bins=_int("profile_bins", values["profile_bins"], 1),
            log_level=log_level.upper(),
        )

    def to_dict(self):
        """Plain JSON-ready dict; ``from_dict(to_dict())`` gives back an equal config"""
        out = {}
        for field in fields(self):
            value = getattr(self, field.name)
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, tuple):
                value = list(value)
            out[field.name] = value
        return out

    def replace(self, **changes):
        """Return a re-validated copy with some keys changed"""
        values = self.to_dict()
        for key, value in changes.items():
            if isinstance(value, Enum):
                value = value.value
            values[key] = value
        return RunConfig.from_dict(values)

    @property
    def candidates(self):
        """Offspring per generation; the baseline always trains a single network"""
        return 1 if self.strategy is Strategy.SGD_BASELINE else self.population

    def total_generations(self):
        """
        Number of generations to run.

        An explicit ``generations`` wins. Otherwise the baseline runs
        ``epochs`` generations, and population strategies use the budget
        preset: ``parity`` gives epochs * p (same optimizer steps along the
        selected lineage as the baseline), ``plus-one`` gives epochs * (p + 1).
        """
        if self.generations is not None:
            return self.generations
        if self.budget == "explicit":
            raise ConfigError("budget 'explicit' needs generations to be set", key="generations")
        if self.strategy is Strategy.SGD_BASELINE:
            return self.epochs
        if self.budget == "plus-one":
            return plus_one_generations(self.epochs, self.candidates)
        return parity_generations(self.epochs, self.candidates)


def parity_generations(epochs, population):
    return epochs * population


def plus_one_generations(epochs, population):
    return epochs * (population + 1)


def load_run_config(config_path=None, overrides=None):
    """Read a config file (or just defaults) and apply key/value overrides"""
    config = Config(config_path, values=overrides)
    return RunConfig.from_config(config)
