"""Run configuration: one flat JSON document, every key overridable by a flag."""

from __future__ import annotations

import argparse
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .features import FAMILIES, ExtractionConfig
from .gmm import GmmConfig
from .textgrid import ARPABET_VOWELS

PATH_KEYS = ("manifest_path", "tokens_path", "plans_path")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    manifest_path: str | None = None
    output_dir: str = "segfake_out"
    tokens_path: str | None = None
    plans_path: str | None = None
    families: list = field(default_factory=lambda: list(FAMILIES))
    # dsp
    formant_ceiling: float = 5500.0
    speaker_ceilings: dict = field(default_factory=dict)
    pitch_floor: float = 75.0
    pitch_ceiling: float = 600.0
    mel_scale: str = "slaney"
    delta_width: int = 2
    n_points: int = 15
    include_nonspeech: bool = False
    vowel_set: list | None = None
    ipa_map: dict | None = None
    # experiment
    repetitions: int = 30
    split: float = 0.7
    master_seed: int = 0
    covariance_kind: str = "auto"
    pretest_grid: list = field(default_factory=lambda: [1, 2, 4, 8, 16])
    pretest_folds: int = 5
    workers: int = 1
    # report
    confidence: float = 0.75

    def validate(self) -> "RunConfig":
        for key in PATH_KEYS:
            p = getattr(self, key)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{key}: {p} does not exist")
        bad = set(self.families) - set(FAMILIES)
        if bad:
            raise ConfigError(f"unknown families {sorted(bad)}")
        if not 0 < self.split < 1:
            raise ConfigError("split must lie in (0, 1)")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.mel_scale not in ("slaney", "htk"):
            raise ConfigError("mel_scale must be slaney or htk")
        if self.vowel_set is not None and not self.vowel_set:
            raise ConfigError("vowel_set must not be empty")
        return self

    def extraction(self) -> ExtractionConfig:
        return ExtractionConfig(
            n_points=self.n_points,
            formant_ceiling=self.formant_ceiling,
            pitch_floor=self.pitch_floor,
            pitch_ceiling=self.pitch_ceiling,
            mel_scale=self.mel_scale,
            delta_width=self.delta_width,
            include_nonspeech=self.include_nonspeech,
            vowel_set=ARPABET_VOWELS if self.vowel_set is None else frozenset(self.vowel_set),
            ipa_map=self.ipa_map,
            speaker_ceilings=dict(self.speaker_ceilings),
        )

    def gmm(self) -> GmmConfig:
        return GmmConfig(covariance_kind=self.covariance_kind, seed=self.master_seed)

    def plan_defaults(self) -> dict:
        return dict(
            repetitions=self.repetitions,
            split=self.split,
            master_seed=self.master_seed,
            gmm=self.gmm(),
            pretest_grid=tuple(self.pretest_grid),
            pretest_folds=self.pretest_folds,
        )

    def digest(self) -> str:
        """Hash of the settings that shape results; paths are left out."""
        d = {k: v for k, v in asdict(self).items() if k not in PATH_KEYS + ("output_dir", "workers")}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _field_types() -> dict:
    hints = typing.get_type_hints(RunConfig)
    return {f.name: hints[f.name] for f in fields(RunConfig)}


def from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = set(_field_types())
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return RunConfig(**doc)


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(doc)


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _parse_list(s: str) -> list:
    items = [x.strip() for x in s.split(",") if x.strip()]
    out = []
    for x in items:
        try:
            out.append(int(x))
        except ValueError:
            out.append(x)
    return out


def _converter(tp):
    args = [a for a in typing.get_args(tp) if a is not type(None)]
    base = args[0] if args else tp
    origin = typing.get_origin(base) or base
    if origin is bool:
        return _parse_bool
    if origin in (int, float, str):
        return origin
    if origin is list:
        return _parse_list
    if origin is dict:
        return json.loads
    raise TypeError(f"no flag converter for {tp}")


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One ``--key-name`` flag per config key (lists comma-separated, dicts as JSON)."""
    group = parser.add_argument_group("config overrides")
    for name, tp in _field_types().items():
        group.add_argument("--" + name.replace("_", "-"), dest="cfg_" + name, type=_converter(tp), default=None, metavar=name.upper())


def resolve(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    for name in _field_types():
        v = getattr(args, "cfg_" + name, None)
        if v is not None:
            setattr(cfg, name, v)
    return cfg.validate()
