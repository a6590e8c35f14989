from __future__ import annotations

import logging

from collections import ChainMap
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Optional

from .hashing import HashSeed
from .pool import PoolConfig
from .sketch import BdrVariant

logger = logging.getLogger("vbdr.config")


class ConfigError(Exception):
    """Exception class for Config related errors."""


class Enum:
    """Variants enumeration.

    Used to define the allowed values of an option.
    """

    def __init__(self, *variants: str | int | bool | None):
        self.variants = variants

    def match(self, value: Any) -> bool:
        return value in self.variants

    def __repr__(self):
        variants = ', '.join(str(v) for v in self.variants)
        return f"Enum({variants})"

    def __str__(self):
        variants = ' | '.join(str(v) for v in self.variants)
        return f"({variants})"


class Option:
    """Config option.

    Used to define the schema. Immutable.

    Parameters:
        type: Option's type, or an Enum of allowed string values.
        default: Option's default value.
        required: If the option is required. If the option is required and
                  not assigned, an error will be raised.
        help: One-line description, shown by `Config.describe`.
    """

    default: Any
    required: bool
    type: type | Enum
    help: str

    def __init__(self, type, default=None, required=False, help=""):
        super().__setattr__('default', default)
        super().__setattr__('required', required)
        super().__setattr__('type', type)
        super().__setattr__('help', help)

    def __setattr__(self, name: str, value: Any):
        raise AttributeError

    def __delattr__(self, name: str):
        raise AttributeError

    def __repr__(self):
        tp = self.type.__name__ if type(self.type) is type else repr(self.type)
        return (f"Option({tp}, default={self.default!r}, "
                f"required={self.required})")


def _convert_bool(value: str) -> bool:
    value = value.lower()
    if value in ("true", "yes", "on", "1"):
        return True
    elif value in ("false", "no", "off", "0"):
        return False
    else:
        raise ConfigError(f"{value!r} cannot be converted to bool")


def _convert_int(value: str) -> int:
    # accepts 0x / 0o / 0b prefixes, e.g. seeds written in hex
    return int(value, 0)


class Config:
    """Layered configuration over a fixed schema.

    Every `override`, `parse` or `load` call adds a layer on top of the
    previous ones, so later sources win: schema defaults, then a config
    file, then command-line flags.

    Args:
        schema: Schema mapping.
        unknown_options: What to do if an option name is not in the
            schema: "error" raises, "ignore" silently omits.
    """

    def __init__(self,
                 schema: dict[str, Option],
                 unknown_options: str = "error"):
        if unknown_options not in ("error", "ignore"):
            raise ValueError("unknown_options must be 'error' or 'ignore'")
        self._config = ChainMap(schema)
        self._types: dict[type, Callable[[str], Any]] = {}
        self.unknown_options = unknown_options

        register = self.register_type
        register(int, _convert_int)
        register(float, float)
        register(bool, _convert_bool)
        register(str, str)

    @property
    def schema(self) -> dict[str, Option]:
        """Return the schema mapping."""
        return self._config.maps[-1]

    def register_type(self, type_: type, convert_fn: Callable[[str], Any]):
        """Add a string converter for an option type."""
        self._types[type_] = convert_fn

    def override(self, options: dict[str, Any], from_string=False):
        """Assign options as a new layer.

        Values of None are skipped, so unset command-line flags do not
        shadow lower layers.

        Raises:
            ConfigError
        """
        layer = {}
        for name, value in options.items():
            if value is None:
                continue
            if name not in self.schema:
                if self.unknown_options == "error":
                    raise ConfigError(f"unknown option {name!r}")
                continue
            layer[name] = self._convert(name, value, from_string)
        self._config.maps.insert(0, layer)

    def parse(self, it: Iterable[str]):
        """Parse `<name>=<value>` strings and add them as one layer.

        Raises:
            ConfigError
        """
        options = {}
        for s in it:
            if '=' not in s:
                raise ConfigError(f"expected <name>=<value>, got {s!r}")
            name, value = s.split('=', 1)
            options[name.strip()] = value.strip()
        self.override(options, from_string=True)

    def load(self, path: Path | str):
        """Read a key=value file as one layer.

        Blank lines and `#` comments are ignored.
        """
        self.parse(read_key_values(path))
        logger.info("config loaded from %s", path)

    def validate(self) -> None:
        """Check that every required option has a value.

        Raises:
            ConfigError.
        """
        missing = [name for name, value in self._config.items()
                   if isinstance(value, Option) and value.required]
        if missing:
            opts = ', '.join(repr(n) for n in missing)
            raise ConfigError(f"required options: {opts}")

    def _convert(self, name: str, value: Any, from_string: bool) -> Any:
        option = self.schema[name]
        tp = option.type

        if isinstance(tp, Enum):
            if not tp.match(value):
                raise ConfigError(f"option {name!r} must be one of the "
                                  f"following: {tp}, got {value!r}")
            return value

        if from_string or (isinstance(value, str) and tp is not str):
            fn = self._types.get(tp)
            if fn is None:
                raise ConfigError(f"{name!r}: cannot convert: {value!r}")
            try:
                return fn(str(value))
            except (ValueError, ConfigError) as e:
                raise ConfigError(f"option {name!r}: {e}") from e

        if tp is float and isinstance(value, int) and \
                not isinstance(value, bool):
            return float(value)
        if not isinstance(value, tp):
            raise ConfigError(f"option {name!r} must be of type "
                              f"{tp.__name__}, got {type(value).__name__}: "
                              f"{value!r}")
        return value

    def items(self) -> Iterator[tuple[str, Any]]:
        for name in self.schema:
            yield name, self[name]

    def clear(self):
        """Remove assigned options, preserving the schema."""
        self._config.maps = self._config.maps[-1:]

    @property
    def layers(self) -> int:
        """Total number of override layers."""
        return len(self._config.maps) - 1

    def pop_layer(self) -> Optional[dict[str, Any]]:
        """Remove and return the latest override layer, if exists."""
        if len(self._config.maps) == 1:
            return None
        return self._config.maps.pop(0)

    def describe(self) -> str:
        lines = []
        for name, option in self.schema.items():
            line = f"{name} = {self[name]!r}"
            if option.help:
                line += f"  # {option.help}"
            lines.append(line)
        return '\n'.join(lines)

    def __getattr__(self, name: str) -> Any:
        if name.startswith('_'):
            raise AttributeError(name)
        if name in self._config:
            value = self._config[name]
            if isinstance(value, Option):
                return value.default
            return value
        raise AttributeError(f"no such config value: {name!r}")

    def __getitem__(self, name: str) -> Any:
        return getattr(self, name)

    def __contains__(self, name: str) -> bool:
        return name in self._config

    def __iter__(self) -> Iterator[str]:
        yield from self.schema

    def __repr__(self):
        lines = ["Config({"]
        for name, val in self.schema.items():
            lines.append(f"  {name!r}: {val!r},")
        lines.append("})")
        return '\n'.join(lines)


VARIANTS = Enum("serial", "gfast", "gsmall")

RUN_OPTIONS = {
    "m": Option(int, default=1 << 16, help="physical register count"),
    "b": Option(int, default=9, help="log2 of the virtual vector size"),
    "k": Option(int, default=300, help="window length in slices"),
    "zbits": Option(int, default=0, help="recorder width, 0 derives it"),
    "variant": Option(VARIANTS, default="gsmall", help="update discipline"),
    "seed_a0": Option(int, default=0x5EED0001, help="physical mapping seed"),
    "seed_a1": Option(int, default=0x5EED0002, help="opposite host seed"),
    "slice_len": Option(float, default=1.0, help="slice duration, seconds"),
    "origin": Option(float, default=0.0, help="timestamp of slice 0"),
    "input": Option(str, default="-", help="event file, - for stdin"),
    "output": Option(str, default="-", help="output file, - for stdout"),
    "workers": Option(int, default=1, help="worker threads"),
    "threshold": Option(float, default=0.0, help="query_top threshold"),
    "candidates": Option(int, default=1 << 20, help="candidate capacity"),
    "timing": Option(bool, default=True, help="report throughput"),
}


GEN_OPTIONS = {
    "slices": Option(int, default=8, help="number of generated slices"),
    "k": Option(int, default=8, help="window length of the ground truth"),
    "slice_len": Option(float, default=1.0, help="slice duration, seconds"),
    "origin": Option(float, default=0.0, help="timestamp of slice 0"),
    "mode": Option(Enum("spread", "repeat"), default="spread",
                   help="how a host's opposite hosts fill its window"),
    "background_hosts": Option(int, default=0, help="extra small hosts"),
    "background_n": Option(int, default=100,
                           help="cardinality of every background host"),
    "seed": Option(int, default=0, help="generator seed"),
}


def read_key_values(path: Path | str) -> list[str]:
    """Return the `<name>=<value>` lines of a config file.

    Raises:
        ConfigError: on a line without `=`.
    """
    path = Path(path)
    lines = []
    with open(path, 'r', encoding="UTF-8") as fin:
        for lineno, line in enumerate(fin, 1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f"{path}:{lineno}: expected "
                                  f"<name>=<value>, got {line!r}")
            lines.append(line)
    return lines


def run_config(**kwargs) -> Config:
    """Run configuration with `kwargs` applied as one layer."""
    config = Config(RUN_OPTIONS)
    if kwargs:
        config.override(kwargs)
    return config


def pool_config_from(config: Config) -> PoolConfig:
    """Build the pool parameters of a run configuration.

    Raises:
        PoolConfigError, HashingError
    """
    return PoolConfig(m=config.m,
                      b=config.b,
                      k=config.k,
                      zbits=config.zbits,
                      variant=BdrVariant(config.variant),
                      seeds=HashSeed(config.seed_a0, config.seed_a1))
