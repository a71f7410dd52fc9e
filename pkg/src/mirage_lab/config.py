"""Experiment configuration shared by the attack driver and the CLI."""

import dataclasses
import json
from dataclasses import dataclass, field

from .hierarchy import L1Config, LatencyModel
from .mirage import MirageConfig

L1_PRESETS = (512, 65536)

DEFAULT_PROFILE_KEY = "2b7e151628aed2a6abf7158809cf4f3c"
DEFAULT_VICTIM_KEY = "000102030405060708090a0b0c0d0e0f"


@dataclass(frozen=True)
class SeedMode:
    """Eviction-RNG seed policy: ``fixed`` reuses one seed, ``random`` draws fresh entropy."""

    kind: str = "fixed"
    seed: int = 42

    def __post_init__(self):
        if self.kind not in ("fixed", "random"):
            raise ValueError(f"unknown seed mode {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "SeedMode":
        text = text.strip().lower()
        if text == "random":
            return cls("random", 0)
        if text == "fixed":
            return cls("fixed", 42)
        if text.startswith("fixed:"):
            return cls("fixed", int(text.split(":", 1)[1]))
        raise ValueError(f"seed mode must be 'random' or 'fixed[:N]', got {text!r}")

    @property
    def tag(self) -> str:
        return f"fixed:{self.seed}" if self.kind == "fixed" else "random"


FIXED_BUG = SeedMode("fixed", 42)
RANDOM_FIX = SeedMode("random", 0)


@dataclass(frozen=True)
class ExperimentConfig:
    mirage: MirageConfig = field(default_factory=MirageConfig)
    l1_size: int = 512
    l1_ways: int = 8
    latency: LatencyModel = field(default_factory=LatencyModel)
    seed_mode: SeedMode = FIXED_BUG
    n_traces: int = 400
    split: int = 1
    bin_mode: str = "xor"
    profile_key: str = DEFAULT_PROFILE_KEY
    victim_key: str = DEFAULT_VICTIM_KEY
    index_seed: int = 2025
    plaintext_seed: int = 1
    attacker_fraction: float = 0.5
    background_fill: bool = True
    warm_tables: bool = True
    out_dir: str = "."

    @property
    def l1(self) -> L1Config:
        return L1Config(self.l1_size, self.l1_ways, self.mirage.line_size)

    @property
    def attacker_lines(self) -> int:
        return int(self.mirage.data_lines * self.attacker_fraction)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        """Everything that affects results; the output directory is left out."""
        d = dataclasses.asdict(self)
        d["seed_mode"] = self.seed_mode.tag
        del d["out_dir"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "mirage" in d:
            d["mirage"] = MirageConfig(**d["mirage"])
        if "latency" in d:
            d["latency"] = LatencyModel(**d["latency"])
        if "seed_mode" in d:
            d["seed_mode"] = SeedMode.parse(str(d["seed_mode"]))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def header_fields(self) -> str:
        m = self.mirage
        return (f"seed_mode={self.seed_mode.tag} l1={self.l1_size} C={m.data_lines} "
                f"ways={m.base_ways_per_skew}+{m.extra_ways_per_skew} line={m.line_size} "
                f"index_seed={self.index_seed} plaintext_seed={self.plaintext_seed} "
                f"attacker_lines={self.attacker_lines} background={int(self.background_fill)} "
                f"warm_tables={int(self.warm_tables)} "
                f"latency={self.latency.l1_hit}/{self.latency.llc_hit}/{self.latency.memory}")
