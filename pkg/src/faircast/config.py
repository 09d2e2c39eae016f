"""Flat dotted-key run configuration.

The file format is one `key = value` pair per line with `#` comments:

    grid.cell_size_m = 1000
    fairness.kind = individual
    fairness.sweep = 0,0.5,2

Values stay strings until a typed accessor pulls them out, so error
messages can always name the offending key.  CLI `--set key=value`
overrides land on top of the file.
"""

from __future__ import annotations

from .errors import ConfigError


class RunConfig:
    def __init__(self, values: dict[str, str] | None = None):
        self.values: dict[str, str] = dict(values or {})

    # -- parsing -----------------------------------------------------------

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        values: dict[str, str] = {}
        try:
            with open(path) as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for lineno, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            values[key] = value.strip()
        return cls(values)

    def apply_overrides(self, pairs) -> None:
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not key=value")
            key, _, value = pair.partition("=")
            key = key.strip()
            if not key:
                raise ConfigError(f"override {pair!r} has an empty key")
            self.values[key] = value.strip()

    # -- typed access ------------------------------------------------------

    _MISSING = object()

    def _raw(self, key: str, default):
        if key in self.values:
            return self.values[key]
        if default is self._MISSING:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def get_str(self, key: str, default=_MISSING) -> str:
        value = self._raw(key, default)
        return value if isinstance(value, str) else value

    def get_int(self, key: str, default=_MISSING) -> int:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        try:
            return int(value)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {value!r} is not an integer") from exc

    def get_float(self, key: str, default=_MISSING) -> float:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        try:
            return float(value)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {value!r} is not a number") from exc

    def get_bool(self, key: str, default=_MISSING) -> bool:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        lowered = value.lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"config key {key!r}: {value!r} is not a boolean")

    def get_float_list(self, key: str, default=_MISSING) -> list[float]:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        parts = [p.strip() for p in value.split(",") if p.strip()]
        try:
            return [float(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {value!r} is not a number list") from exc

    def get_str_list(self, key: str, default=_MISSING) -> list[str]:
        value = self._raw(key, default)
        if not isinstance(value, str):
            return value
        return [p.strip() for p in value.split(",") if p.strip()]
