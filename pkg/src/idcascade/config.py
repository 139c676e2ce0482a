"""Run configuration: INI-style files with a canonical serialization.

Four sections (model, grid, experiment, output) hold flat key = value
pairs.  Serialization is canonical -- fixed section order, sorted keys,
single-space separators -- so parse -> serialize is a fixpoint on its own
output and the config hash is stable across cosmetic reformatting.
"""

import configparser
import hashlib
import io
import math
from dataclasses import dataclass, field as dc_field
from typing import Dict, Optional

from .levy import AtomicJumps, TabulatedJumps, ZeroJumps, build_model
from .field import GridSpec

_SECTION_ORDER = ("model", "grid", "experiment", "output")


class ConfigError(ValueError):
    """Invalid configuration; carries the offending section.key."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass
class RunConfig:
    sections: Dict[str, Dict[str, str]] = dc_field(default_factory=dict)

    # -- raw access ---------------------------------------------------------

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def set(self, section, key, value):
        self.sections.setdefault(section, {})[key] = str(value)

    def require(self, section, key):
        val = self.get(section, key)
        if val is None:
            raise ConfigError(f"{section}.{key}", "missing required key")
        return val

    def get_float(self, section, key, default=None):
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigError(f"{section}.{key}", "missing required key")
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}",
                              f"not a number: {raw!r}") from None

    def get_int(self, section, key, default=None):
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigError(f"{section}.{key}", "missing required key")
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}",
                              f"not an integer: {raw!r}") from None

    def get_bool(self, section, key, default=False):
        raw = self.get(section, key)
        if raw is None:
            return default
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{section}.{key}", f"not a boolean: {raw!r}")

    def get_float_list(self, section, key, default=None):
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigError(f"{section}.{key}", "missing required key")
            return list(default)
        try:
            return [float(tok) for tok in raw.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(f"{section}.{key}",
                              f"not a comma list of numbers: {raw!r}") from None

    # -- typed views --------------------------------------------------------

    def seed(self):
        s = self.get_int("experiment", "seed", 0)
        if not 0 <= s < 2 ** 64:
            raise ConfigError("experiment.seed",
                              "must be an unsigned 64-bit integer")
        return s

    def replicas(self):
        r = self.get_int("experiment", "replicas", 1)
        if r < 1:
            raise ConfigError("experiment.replicas", "must be >= 1")
        return r

    def build_model(self):
        sigma2 = self.get_float("model", "sigma2", 0.0)
        if sigma2 < 0:
            raise ConfigError("model.sigma2", "must be nonnegative")
        kind = self.get("model", "jump_kind", "none").strip().lower()
        try:
            if kind in ("none", "zero"):
                nu = ZeroJumps()
            elif kind == "atoms":
                locs = self.get_float_list("model", "atom_locations")
                masses = self.get_float_list("model", "atom_masses")
                nu = AtomicJumps(tuple(locs), tuple(masses))
            elif kind == "tabulated":
                xs = self.get_float_list("model", "tabulated_x")
                ds = self.get_float_list("model", "tabulated_density")
                lr = self.get("model", "left_rate")
                rr = self.get("model", "right_rate")
                nu = TabulatedJumps(tuple(xs), tuple(ds),
                                    None if lr is None else float(lr),
                                    None if rr is None else float(rr))
            else:
                raise ConfigError("model.jump_kind",
                                  f"unknown kind {kind!r}")
            return build_model(sigma2, nu)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError("model", str(exc)) from exc

    def build_grid(self):
        levels = self.get_int("grid", "levels", 8)
        oversample = self.get_int("grid", "oversample", 4)
        lo = self.get_float("grid", "interval_lo", 0.0)
        hi = self.get_float("grid", "interval_hi", 1.0)
        raw_cl = self.get("grid", "cell_levels")
        cl = None if raw_cl in (None, "all") else int(raw_cl)
        try:
            return GridSpec((lo, hi), levels, oversample, cl)
        except ValueError as exc:
            raise ConfigError("grid", str(exc)) from exc

    def sampler_kind(self):
        kind = self.get("experiment", "sampler", "auto").strip().lower()
        if kind not in ("auto", "gaussian", "poisson", "hybrid"):
            raise ConfigError("experiment.sampler",
                              f"unknown sampler {kind!r}")
        return kind

    def small_jump_cutoff(self):
        raw = self.get("model", "small_jump_cutoff")
        return None if raw is None else float(raw)

    def output_dir(self):
        return self.get("output", "directory", "out")

    def output_formats(self):
        fmt = self.get("output", "formats", "both").strip().lower()
        if fmt not in ("csv", "json", "both"):
            raise ConfigError("output.formats", f"unknown format {fmt!r}")
        return fmt


def parse_config(text):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("(file)", f"cannot parse: {exc}") from exc
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SECTION_ORDER:
            raise ConfigError(section, "unknown section")
        for key, value in parser.items(section):
            cfg.set(section, key, value.strip())
    return cfg


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def serialize_config(cfg):
    """Canonical text form: fixed section order, sorted keys."""
    out = io.StringIO()
    first = True
    for section in _SECTION_ORDER:
        if section not in cfg.sections or not cfg.sections[section]:
            continue
        if not first:
            out.write("\n")
        first = False
        out.write(f"[{section}]\n")
        for key in sorted(cfg.sections[section]):
            out.write(f"{key} = {cfg.sections[section][key]}\n")
    return out.getvalue()


def config_hash(cfg):
    """Stable 16-hex-digit digest of the canonical serialization."""
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]
