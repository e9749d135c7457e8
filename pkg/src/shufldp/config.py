"""Flat YAML experiment configs.

A config is a single mapping of scalar keys (``#`` starts a comment)::

    mode: dpshuffle
    N: 100
    n: 40
    rounds: 50
    seed: 1
    data: synthetic
    epsilon: 8

Overrides from the command line use the same keys (``--set n=20``).
"""

from __future__ import annotations

from typing import Any, Dict, Iterable, Optional

import yaml

from .accounting import max_round_epsilon
from .errors import AccountantError, ConfigError
from .federation import DataSpec, ExperimentConfig
from .mechanisms import PrivacyParams

AUTO = "auto"
REQUIRED = ("mode", "N", "n", "rounds", "seed", "data")

# key -> (type, default); None default means "derived" or "optional"
FIELDS: Dict[str, tuple] = {
    "mode": (str, None),
    "N": (int, None),
    "n": (int, None),
    "rounds": (int, None),
    "seed": (int, None),
    "data": (str, None),
    "out": (str, None),
    "epochs": (int, 40),
    "batch_size": (int, 16),
    "lr_local": (float, 0.05),
    "lr_global": (float, 1.0),
    "epsilon": (float, 100.0),
    "epsilon0": (float, 1.5),  # or "auto"
    "delta_limit": (float, None),
    "k": (float, 0.5),
    "client_k": (list, None),
    "clip": (float, 5.0),
    "sensitivity": (float, 1.0),
    "schedule": (str, "constant"),
    "decay_rounds": (int, None),
    "t_proposal_low": (float, 1.0),
    "t_proposal_high": (float, 10.0),
    "classes": (int, 3),
    "length": (int, 64),
    "channels": (int, 1),
    "per_class": (int, 1000),
    "noise_sigma": (float, 0.3),
    "train_ratio": (float, 0.9),
    "window": (int, None),
    "stride": (int, None),
}


_PRIVACY_KEYS = {"clip_c": "clip", "linear-decay": "decay_rounds", "unknown": "schedule"}


def default_delta_limit(N: int) -> float:
    """0.1 for federations of up to a few hundred clients, 0.001 from 1000 on."""
    return 0.001 if N >= 1000 else 0.1


def auto_epsilon0(v: Dict[str, Any]) -> float:
    """Largest constant per-round ε the budget sustains for all planned rounds."""
    if v["schedule"] != "constant":
        raise ConfigError("epsilon0", "auto calibration supports the constant schedule only")
    if not 1 <= v["n"] <= v["N"]:
        raise ConfigError("n", f"must satisfy 1 <= n <= N={v['N']}")
    try:
        return max_round_epsilon(v["epsilon"], v["delta_limit"], v["n"] / v["N"], max(v["rounds"], 1))
    except (AccountantError, ValueError) as exc:
        raise ConfigError("epsilon0", str(exc)) from None


def _coerce(key: str, value: Any) -> Any:
    kind = FIELDS[key][0]
    if value is None:
        return None
    if key == "epsilon0" and value == AUTO:
        return AUTO
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            # YAML 1.1 reads "1e-9" as a string
            try:
                return float(value)
            except ValueError:
                pass
        raise ConfigError(key, f"expected a number, got {value!r}")
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected text, got {value!r}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return [_coerce_item(key, i, v) for i, v in enumerate(value)]
    raise AssertionError(kind)


def _coerce_item(key: str, index: int, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}[{index}]", f"expected a number, got {value!r}")
    return float(value)


def parse_mapping(raw: Any) -> Dict[str, Any]:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a flat key/value mapping")
    out = {}
    for key, value in raw.items():
        if key not in FIELDS:
            raise ConfigError(str(key), "unknown field")
        out[key] = _coerce(key, value)
    return out


def parse_override(text: str) -> tuple:
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, _, value = text.partition("=")
    key = key.strip()
    if key not in FIELDS:
        raise ConfigError(key, "unknown field")
    try:
        parsed = yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse value {value!r}: {exc}") from None
    return key, _coerce(key, parsed)


def load_config(path, overrides: Iterable[str] = (), env_seed: Optional[str] = None) -> Dict[str, Any]:
    """Read a config file and apply the seed environment override and ``--set`` pairs."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    values = parse_mapping(raw)
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError("seed", f"SHUFLDP_SEED must be an integer, got {env_seed!r}") from None
    for item in overrides:
        key, value = parse_override(item)
        values[key] = value
    return values


def build_config(values: Dict[str, Any]) -> ExperimentConfig:
    for key in REQUIRED:
        if values.get(key) is None:
            raise ConfigError(key, "missing required field")
    v = {k: (values[k] if values.get(k) is not None else d) for k, (_, d) in FIELDS.items()}
    if v["delta_limit"] is None:
        v["delta_limit"] = default_delta_limit(v["N"])
    if v["epsilon0"] == AUTO:
        v["epsilon0"] = auto_epsilon0(v)
    try:
        privacy = PrivacyParams(
            epsilon0=v["epsilon0"],
            delta_limit=v["delta_limit"],
            k=v["k"],
            clip_c=v["clip"],
            sensitivity=v["sensitivity"],
            schedule=v["schedule"],
            decay_rounds=v["decay_rounds"],
        )
    except ValueError as exc:
        # PrivacyParams messages lead with the offending attribute name
        attr = str(exc).split()[0]
        raise ConfigError(_PRIVACY_KEYS.get(attr, attr), str(exc)) from None
    data = DataSpec(
        source=v["data"],
        classes=v["classes"],
        length=v["length"],
        channels=v["channels"],
        per_class=v["per_class"],
        noise_sigma=v["noise_sigma"],
        train_ratio=v["train_ratio"],
        window=v["window"],
        stride=v["stride"],
    )
    return ExperimentConfig(
        mode=v["mode"],
        N=v["N"],
        n=v["n"],
        rounds=v["rounds"],
        seed=v["seed"],
        privacy=privacy,
        epsilon_budget=v["epsilon"],
        epochs=v["epochs"],
        batch_size=v["batch_size"],
        lr_local=v["lr_local"],
        lr_global=v["lr_global"],
        t_proposal_low=v["t_proposal_low"],
        t_proposal_high=v["t_proposal_high"],
        client_k=tuple(v["client_k"]) if v["client_k"] is not None else None,
        data=data,
    )
