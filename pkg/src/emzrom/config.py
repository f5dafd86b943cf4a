"""Typed experiment configuration (INI sections, unknown keys rejected)."""

from __future__ import annotations

import configparser
import copy
import hashlib
import json

from .errors import ConfigError


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    text = str(text).strip()
    return None if text in ("", "none", "auto") else float(text)


def _float_list(text):
    text = str(text).strip()
    return [] if not text else [float(x) for x in text.split(",")]


def _str_list(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


# section -> key -> (parser, default)
SCHEMA = {
    "model": {
        "kind": (str, "fpu-langevin"),
        "n": (int, 100),
        "m": (float, 1.0),
        "nu": (float, 1.0),
        "theta": (float, 0.1),
        "beta": (float, 1.0),
        "gamma": (float, 1.0),
        "gamma_site": (int, -1),
        "pin_nu": (float, 1.0),
        "pin_theta": (float, 0.0),
        "t_left": (float, 1.0),
        "t_right": (float, 1.0),
        "gamma_left": (float, 1.0),
        "gamma_right": (float, 1.0),
        "lambda_left": (float, 1.0),
        "lambda_right": (float, 1.0),
        "observable": (str, "p:50"),
    },
    "ensemble": {
        "paths": (int, 1000),
        "dt": (float, 0.01),
        "t_end": (float, 10.0),
        "seed": (int, 0),
        "init": (str, "gibbs"),
        "beta0": (_opt_float, None),
        "save_stride": (int, 1),
        "burn_in": (float, 0.0),
        "store_format": (str, "npz"),
        "observables": (_str_list, []),
        "time_average": (_bool, False),
        "max_lag": (int, -1),
    },
    "basis": {
        "kind": (str, "faber"),
        "order": (int, 14),
        "a": (_opt_float, None),
        "b": (_opt_float, None),
        "sigma": (_opt_float, None),
        "domain": (str, "default"),
    },
    "fit": {
        "lambda_grid": (_float_list, []),
        "max_degree": (int, 64),
        "noise_floor": (_opt_float, None),
    },
    "rom": {
        "modes": (int, 200),
        "psd_tol": (float, 1e-8),
        "white_noise": (_opt_float, None),
        "paths": (int, 1000),
        "seed_offset": (int, 1),
    },
}

CHOICES = {
    ("model", "kind"): ("fpu-langevin", "heat-conduction"),
    ("ensemble", "init"): ("gibbs", "beta0", "point"),
    ("ensemble", "store_format"): ("npz", "csv"),
    ("basis", "kind"): ("taylor", "faber", "laguerre"),
    ("basis", "domain"): ("default", "calibrate"),
}


def defaults():
    return {sec: {k: copy.deepcopy(d) for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def _set(cfg, section, key, raw, origin):
    if section not in SCHEMA:
        raise ConfigError(f"{origin}: unknown section [{section}]; expected one of {sorted(SCHEMA)}")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{origin}: unknown key '{key}' in [{section}]; "
                          f"valid keys are {sorted(SCHEMA[section])}")
    parser = SCHEMA[section][key][0]
    try:
        val = parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: bad value for {section}.{key}: {exc}") from None
    allowed = CHOICES.get((section, key))
    if allowed and val not in allowed:
        raise ConfigError(f"{origin}: {section}.{key} must be one of {allowed}, got {val!r}")
    cfg[section][key] = val


def load_config(path=None, overrides=()):
    """Resolve defaults, an optional INI file and ``section.key=value`` overrides."""
    cfg = defaults()
    if path is not None:
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        for section in cp.sections():
            for key, raw in cp.items(section):
                _set(cfg, section, key, raw, path)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        _set(cfg, section, key.strip(), raw.strip(), "--set")
    return cfg


def config_hash(obj):
    """Short SHA-256 of the canonical JSON form of ``obj``."""
    text = json.dumps(obj, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
