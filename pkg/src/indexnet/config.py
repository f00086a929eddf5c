"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Every key must be known, and values are validated when the file is read,
so a typo fails before any training starts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .bench.comparison import DEFAULT_PAIRINGS, Pairing, parse_pairings
from .bench.train import TrainConfig, get_profile
from .errors import ConfigError
from .index_networks import IndexNetConfig, Normalization


def _int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected an integer, got {text!r}") from None


def _optional_int(key, text):
    return None if text.lower() in ("none", "all", "") else _int(key, text)


def _float(key, text):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected a number, got {text!r}") from None


def _int_list(key, text):
    return tuple(_int(key, t.strip()) for t in text.split(",") if t.strip())


def _bool(key, text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key {key!r}: expected true/false, got {text!r}")


def _choice(*options):
    def parse(key, text):
        if text not in options:
            raise ConfigError(f"config key {key!r}: expected one of {list(options)}, got {text!r}")
        return text

    return parse


def _str(key, text):
    return text


PARSERS = {
    "profile": _choice("desk", "full", "smoke"),
    "epochs": _int,
    "batch_size": _int,
    "lr": _float,
    "lr_decay_epochs": _int_list,
    "loss": _choice("l1"),
    "seed": _int,
    "seeds": _int_list,
    "subset_size": _optional_int,
    "test_size": _optional_int,
    "optimizer": _choice("adam", "sgd"),
    "momentum": _float,
    "weight_decay": _float,
    "pair": _str,
    "indexnet": _str,
    "pairs": _str,
    "normalization": _choice(*(n.value for n in Normalization)),
    "data": _str,
    "out": _str,
    "precision": _choice("f32", "f64"),
    "resize": _choice("bilinear", "pad"),
    "workers": _int,
    "timing": _bool,
    "save_params": _bool,
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        values[key] = PARSERS[key](key, value)
    return values


def parse_overrides(items: list[str]) -> dict[str, object]:
    """``--set key=value`` pairs, validated like file entries."""
    return parse_config_text("\n".join(items), "--set")


@dataclass(frozen=True)
class RunConfig:
    profile: str = "desk"
    epochs: int | None = None
    batch_size: int | None = None
    lr: float | None = None
    lr_decay_epochs: tuple[int, ...] | None = None
    loss: str = "l1"
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2)
    subset_size: int | None | str = "profile"
    test_size: int | None | str = "profile"
    optimizer: str | None = None
    momentum: float | None = None
    weight_decay: float | None = None
    pair: str = "ip_iu"
    indexnet: str = "m2o_nl_c"
    pairs: str = ""
    normalization: str = Normalization.SIGSOFT_SIG.value
    data: str = ""
    out: str = "runs"
    precision: str = "f32"
    resize: str = "bilinear"
    workers: int = 1
    timing: bool = False
    save_params: bool = True

    @classmethod
    def load(cls, path: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
        values: dict[str, object] = {}
        if path is not None:
            p = Path(path)
            try:
                text = p.read_text(encoding="utf-8")
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {p}") from None
            values.update(parse_config_text(text, str(p)))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        cfg = cls(**values)
        cfg.train_config()  # validate now
        return cfg

    def with_overrides(self, **kw) -> RunConfig:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def train_config(self) -> TrainConfig:
        base = get_profile(self.profile).train
        kw = {
            name: getattr(self, name)
            for name in ("epochs", "batch_size", "lr", "lr_decay_epochs", "optimizer", "momentum", "weight_decay")
            if getattr(self, name) is not None
        }
        if self.subset_size != "profile":
            kw["subset_size"] = self.subset_size
        return replace(base, loss=self.loss, seed=self.seed, **kw)

    def test_size_value(self) -> int | None:
        return get_profile(self.profile).test_size if self.test_size == "profile" else self.test_size

    def indexnet_config(self, label: str | None = None) -> IndexNetConfig:
        return IndexNetConfig.parse(label or self.indexnet, normalization=Normalization(self.normalization))

    def pairing(self) -> Pairing:
        p = Pairing.parse(self.pair)
        if p.pair.needs_indexnet:
            p = Pairing(p.pair, self.indexnet_config()).validated()
        return p

    def pairing_list(self) -> list[Pairing]:
        if not self.pairs:
            out = list(DEFAULT_PAIRINGS)
        elif self.pairs == "all":
            from .bench.comparison import ALL_PAIRINGS

            out = list(ALL_PAIRINGS)
        else:
            out = parse_pairings(self.pairs)
        norm = Normalization(self.normalization)
        return [
            p if p.indexnet is None else Pairing(p.pair, replace(p.indexnet, normalization=norm)) for p in out
        ]

    def dataset_root(self) -> Path:
        from .bench.data import default_dataset_root

        return Path(self.data) if self.data else default_dataset_root()

    def dump(self) -> str:
        """Resolved settings as a config document that reloads to the same run."""
        lines = []
        tc = self.train_config()
        lines.append(f"profile = {self.profile}")
        for name in ("epochs", "batch_size", "lr", "optimizer", "momentum", "weight_decay", "loss", "seed"):
            lines.append(f"{name} = {getattr(tc, name)}")
        lines.append(f"lr_decay_epochs = {','.join(str(e) for e in tc.lr_decay_epochs)}")
        lines.append(f"subset_size = {tc.subset_size if tc.subset_size is not None else 'all'}")
        ts = self.test_size_value()
        lines.append(f"test_size = {ts if ts is not None else 'all'}")
        lines.append(f"seeds = {','.join(str(s) for s in self.seeds)}")
        for name in ("pair", "indexnet", "pairs", "normalization", "data", "out", "precision", "resize"):
            lines.append(f"{name} = {getattr(self, name)}")
        lines.append(f"workers = {self.workers}")
        lines.append(f"timing = {str(self.timing).lower()}")
        lines.append(f"save_params = {str(self.save_params).lower()}")
        return "\n".join(lines) + "\n"
