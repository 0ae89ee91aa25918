"""Pipeline configuration and its text format.

A config file holds one ``key = value`` pair per line. Keys are the field
names of ``PipelineConfig``; values are JSON literals (numbers, quoted
strings, ``true``/``false``, ``null``, lists). Blank lines and lines
starting with ``#`` are ignored. Example::

    # one staged lane change, single cluster
    synthetic = "staged"
    k = 1
    type_filter = ["PC", "PC", "PC"]

Writing a config emits every field in declaration order, so reading it back
reproduces the same object.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .cluster import CENTER_MODES
from .errors import ValidationError
from .hmm import DECODERS, FIT_INITS, SELECTION_CRITERIA

OUT_ENV = "LCPATTERN_OUT"
DEFAULT_OUT = "lcpattern_out"


def default_output_dir() -> str:
    return os.environ.get(OUT_ENV) or DEFAULT_OUT


@dataclass
class PipelineConfig:
    inputs: list[str] = field(default_factory=list)
    synthetic: str | None = None
    synthetic_seed: int = 0
    smooth_window: int = 0
    type_filter: list[str] | None = field(default_factory=lambda: ["PC", "PC", "PC"])
    min_frames: int = 10
    l: int = 75
    n_max: int = 10
    model_selection: str = "max-ll"
    decode: str = "viterbi"
    n_mix: int = 1
    reg: float = 1e-6
    hmm_init: str = "both"
    hmm_restarts: int = 1
    k: int = 13
    k_range: list[int] | None = None
    center: str = "dba"
    max_iters: int = 50
    ttc_cap: float = 100.0
    typing_seed: int = 0
    hmm_seed: int = 0
    cluster_seed: int = 0
    output_dir: str = field(default_factory=default_output_dir)
    jobs: int = 1

    def validate(self) -> "PipelineConfig":
        if bool(self.inputs) == bool(self.synthetic):
            raise ValidationError("set exactly one of 'inputs' and 'synthetic'")
        if self.model_selection not in SELECTION_CRITERIA:
            raise ValidationError(f"model_selection must be one of {SELECTION_CRITERIA}")
        if self.decode not in DECODERS:
            raise ValidationError(f"decode must be one of {DECODERS}")
        if self.hmm_init not in FIT_INITS:
            raise ValidationError(f"hmm_init must be one of {FIT_INITS}")
        if self.center not in CENTER_MODES:
            raise ValidationError(f"center must be one of {CENTER_MODES}")
        if self.type_filter is not None and len(self.type_filter) != 3:
            raise ValidationError("type_filter needs three class names (ego, por, ta)")
        for name in ("min_frames", "n_max", "k", "max_iters", "n_mix", "hmm_restarts", "jobs"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.l < 2:
            raise ValidationError("l must be >= 2")
        if not self.ttc_cap > 0:
            raise ValidationError("ttc_cap must be positive")
        if self.k_range is not None and (not self.k_range or min(self.k_range) < 1):
            raise ValidationError("k_range must be a non-empty list of positive integers")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        for f in fields(cls):
            v = getattr(cfg, f.name)
            if f.type in ("int", "float") and (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise ValidationError(f"{f.name}: expected a number, got {v!r}")
            if f.type == "int" and not isinstance(v, int):
                raise ValidationError(f"{f.name}: expected an integer, got {v!r}")
            if f.type == "float":
                setattr(cfg, f.name, float(v))
        return cfg

    def to_text(self) -> str:
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "PipelineConfig":
        data = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValidationError(f"{source}:{n}: expected 'key = value'")
            try:
                data[key.strip()] = json.loads(value.strip())
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{source}:{n}: bad value for {key.strip()!r}: {exc.msg}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"no such config file: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"), str(path))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    def stage_settings(self, stage: str) -> dict:
        """The settings that influence ``stage``'s outputs (used for cache keys)."""
        keys = {
            "ingest": ("inputs", "synthetic", "synthetic_seed", "smooth_window"),
            "extract": ("type_filter", "typing_seed"),
            "segment": ("min_frames", "l", "n_max", "model_selection", "decode", "n_mix", "reg",
                        "hmm_init", "hmm_restarts", "hmm_seed"),
            "cluster": ("k", "k_range", "center", "max_iters", "cluster_seed"),
            "risk": ("ttc_cap",),
        }[stage]
        return {k: getattr(self, k) for k in keys}
