"""Run configuration: INI-style file with sections, overridden by CLI flags.

Precedence is flags > file > defaults.  Every key below may appear in the file
under its section; unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .audit import AuditConfig, ContextConfig
from .errors import ConfigError
from .mgnan.training import TrainConfig
from .retrieval import RetrievalConfig

DEFAULTS: dict[str, dict[str, Any]] = {
    "paths": {"graph": None, "embeddings": None, "queries": None, "out": None},
    "retrieval": {
        "mode": "single",
        "k_seeds": 4,
        "hops": 3,
        "k_frontier": 5,
        "prize_pool": 100,
        "merge_pool": 200,
        "edge_cost": 1.0,
        "prize_scale": 1.0,
        "prize_scheme": "rank",
        "query_seed": 0,
    },
    "model": {"hidden": "64,64", "n_outputs": 1, "link": "identity", "n_knots": 16, "groups": 1},
    "train": {"seed": 0, "lr": 1e-3, "epochs": 100, "batch_size": 32},
    "context": {"mode": "full", "k": 25},
    "audit": {"k": 25, "bridges": 10, "reduction": "abs0", "include_neighbors": False},
}


def _coerce(default: Any, raw: Any, key: str) -> Any:
    if raw is None or not isinstance(raw, str):
        return raw
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return None if raw.strip().lower() in ("none", "inf") and key.endswith("k_frontier") else int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw.strip()


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]]

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict[str, dict[str, Any]] | None = None) -> "RunConfig":
        values = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
        if path is not None:
            parser = configparser.ConfigParser()
            if not parser.read(path, encoding="utf-8"):
                raise ConfigError(f"cannot read config file {path}")
            for sec in parser.sections():
                if sec not in values:
                    raise ConfigError(f"unknown config section [{sec}]")
                for key, raw in parser.items(sec):
                    if key not in values[sec]:
                        raise ConfigError(f"unknown config key {sec}.{key}")
                    values[sec][key] = _coerce(DEFAULTS[sec][key], raw, f"{sec}.{key}")
        for sec, keys in (overrides or {}).items():
            for key, val in keys.items():
                if val is not None:
                    values[sec][key] = _coerce(DEFAULTS[sec][key], val, f"{sec}.{key}")
        return cls(values)

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    def retrieval(self) -> RetrievalConfig:
        r = self.values["retrieval"]
        names = {f.name for f in fields(RetrievalConfig)}
        return RetrievalConfig(**{k: v for k, v in r.items() if k in names})

    def train(self) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(lr=t["lr"], epochs=t["epochs"], batch_size=t["batch_size"], seed=t["seed"])

    def hidden(self) -> tuple[int, ...]:
        raw = str(self.values["model"]["hidden"]).strip()
        if not raw:
            return ()
        try:
            return tuple(int(x) for x in raw.split(","))
        except ValueError:
            raise ConfigError(f"model.hidden: expected comma-separated widths, got {raw!r}") from None

    def context(self) -> ContextConfig:
        c = self.values["context"]
        return ContextConfig(c["mode"], c["k"])

    def audit(self) -> AuditConfig:
        a = self.values["audit"]
        return AuditConfig(k=a["k"], bridges=a["bridges"], reduction=a["reduction"],
                           include_neighbors=a["include_neighbors"])

    def echo(self) -> dict[str, dict[str, Any]]:
        """Config for output manifests; paths are left out so output trees do
        not depend on where a run was launched."""
        return {sec: dict(keys) for sec, keys in self.values.items() if sec != "paths"}
