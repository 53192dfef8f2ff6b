import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, List, Tuple

import yaml

from .errors import ConfigError

# Allow overriding config path via environment variable
CONFIG_PATH = os.environ.get("CONFIG_PATH", os.path.join("data", "config.yml"))

GEN_MODES = ("dict_mlm", "dict_tlm", "vanilla_mlm")
MASK_BUDGETS = ("all_words", "eligible_only")
BUDGET_ROUNDINGS = ("nearest", "stochastic")
SYNONYM_SAMPLINGS = ("per_language", "flat")
SYNTH_PRESETS = ("near", "far")


@dataclass
class LexiconConfig:
    """How MUSE dictionaries are normalized and merged."""

    symmetrize: bool = True
    lowercase: bool = True


@dataclass
class SamplingPolicy:
    """Temperature-based language sampling over monolingual corpora."""

    temperature: float = 5.0
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 1:
            raise ConfigError(
                f"sampling.temperature must be >= 1, got {self.temperature}"
            )


@dataclass
class GenConfig:
    """Training-example generation settings."""

    mask_rate: float = 0.15
    t: float = 0.5
    duplication: int = 5
    mode: str = "dict_mlm"
    tlm_replace_prob: float = 1.0
    max_seq_len: int = 64
    seed: int | None = None
    mask_budget: str = "all_words"
    budget_rounding: str = "stochastic"
    synonym_sampling: str = "per_language"
    sentences: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.mask_rate < 1:
            raise ConfigError(f"gen.mask_rate must be in (0, 1), got {self.mask_rate}")
        if not 0 <= self.t <= 1:
            raise ConfigError(f"gen.t must be in [0, 1], got {self.t}")
        if not 0 <= self.tlm_replace_prob <= 1:
            raise ConfigError(
                f"gen.tlm_replace_prob must be in [0, 1], got {self.tlm_replace_prob}"
            )
        if self.duplication < 1:
            raise ConfigError(f"gen.duplication must be >= 1, got {self.duplication}")
        if self.max_seq_len < 3:
            raise ConfigError(f"gen.max_seq_len must be >= 3, got {self.max_seq_len}")
        _check_choice("gen.mode", self.mode, GEN_MODES)
        _check_choice("gen.mask_budget", self.mask_budget, MASK_BUDGETS)
        _check_choice("gen.budget_rounding", self.budget_rounding, BUDGET_ROUNDINGS)
        _check_choice(
            "gen.synonym_sampling", self.synonym_sampling, SYNONYM_SAMPLINGS
        )


@dataclass
class ModelConfig:
    """Language-aware transformer encoder with a language-conditioned MLM head.

    ``vocab_size``, ``lang_count`` and ``lang_emb_dim`` set to 0 are filled in
    from the vocab file, the language list and ``hidden`` respectively.
    """

    vocab_size: int = 0
    hidden: int = 64
    layers: int = 4
    heads: int = 4
    ffn_dim: int = 256
    lang_count: int = 0
    lang_emb_dim: int = 0
    max_positions: int = 128
    dropout: float = 0.1
    conditioning_enabled: bool = True
    tie_output_embeddings: bool = True
    dtype: str = "float64"
    preset: str = "desk"

    def __post_init__(self) -> None:
        if self.hidden % self.heads:
            raise ConfigError(
                f"model.hidden ({self.hidden}) must be divisible by "
                f"model.heads ({self.heads})"
            )
        if self.lang_emb_dim > self.hidden:
            raise ConfigError(
                f"model.lang_emb_dim ({self.lang_emb_dim}) must be <= "
                f"model.hidden ({self.hidden})"
            )
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"model.dropout must be in [0, 1), got {self.dropout}")
        _check_choice("model.dtype", self.dtype, ("float64", "float32"))

    @property
    def emb_dim(self) -> int:
        return self.lang_emb_dim or self.hidden

    def resolved(self, vocab_size: int, lang_count: int) -> "ModelConfig":
        """Return a copy with data-dependent sizes filled in."""
        return replace(
            self,
            vocab_size=self.vocab_size or vocab_size,
            lang_count=self.lang_count or lang_count,
            lang_emb_dim=self.emb_dim,
        )


@dataclass
class TrainConfig:
    """AdamW optimization loop settings."""

    lr: float = 1e-3
    warmup_steps: int = 100
    total_steps: int = 2000
    batch_size: int = 16
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int | None = None
    checkpoint_every: int = 500
    grad_clip: float = 1.0
    preset: str = "desk"

    def __post_init__(self) -> None:
        self.betas = tuple(float(b) for b in self.betas)  # type: ignore[assignment]
        if len(self.betas) != 2:
            raise ConfigError(f"train.betas must have two values, got {self.betas}")
        if self.warmup_steps > self.total_steps:
            raise ConfigError(
                f"train.warmup_steps ({self.warmup_steps}) must be <= "
                f"train.total_steps ({self.total_steps})"
            )
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be positive, got {self.lr}")


@dataclass
class SynthConfig:
    """Artificial language pairs with exact dictionaries and parallel text."""

    lemma_count: int = 400
    languages: List[str] = field(default_factory=lambda: ["sa", "sb"])
    preset: str = "near"
    transforms: List[str] = field(default_factory=list)
    zipf_s: float = 1.2
    min_len: int = 6
    max_len: int = 14
    corpus_sentences: int = 4000
    coverage: float = 1.0
    pair_count: int = 200
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.lemma_count < 50:
            raise ConfigError(
                f"synth.lemma_count must be >= 50, got {self.lemma_count}"
            )
        if not 0 <= self.coverage <= 1:
            raise ConfigError(f"synth.coverage must be in [0, 1], got {self.coverage}")
        if self.pair_count < 10:
            raise ConfigError(f"synth.pair_count must be >= 10, got {self.pair_count}")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError(
                f"synth length range [{self.min_len}, {self.max_len}] is invalid"
            )
        if self.transforms and len(self.transforms) != len(self.languages):
            raise ConfigError("synth.transforms must list one spec per language")
        _check_choice("synth.preset", self.preset, SYNTH_PRESETS)


MODEL_PRESETS = {
    "desk": {},
    # 12 layers, 768 hidden, 768-dim language embeddings
    "at_scale": {
        "hidden": 768,
        "layers": 12,
        "heads": 12,
        "ffn_dim": 3072,
        "lang_emb_dim": 768,
        "max_positions": 512,
    },
}

TRAIN_PRESETS = {
    "desk": {},
    # At-scale regime (LAMB at lr 0.0016 there; AdamW here)
    "at_scale": {
        "lr": 0.0016,
        "batch_size": 8192,
        "total_steps": 500_000,
        "warmup_steps": 10_000,
    },
}

SECTIONS = {
    "lexicon": LexiconConfig,
    "sampling": SamplingPolicy,
    "gen": GenConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
}

PRESETS = {"model": MODEL_PRESETS, "train": TRAIN_PRESETS}


@dataclass
class RunConfig:
    """Everything a pipeline run needs; one YAML file maps onto it."""

    seed: int = 0
    log_level: str = "info"
    workers: int = 1
    languages: List[str] = field(default_factory=lambda: ["sa", "sb"])
    lexicon: LexiconConfig = field(default_factory=LexiconConfig)
    sampling: SamplingPolicy = field(default_factory=SamplingPolicy)
    gen: GenConfig = field(default_factory=GenConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_choice(key: str, value: str, choices: tuple) -> None:
    if value not in choices:
        raise ConfigError(f"{key} must be one of {', '.join(choices)}; got {value!r}")


def load_config(path: str | None = None) -> dict:
    """Load YAML configuration from ``path`` or CONFIG_PATH."""
    path = path or CONFIG_PATH
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data or {}


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, int) or default is None:
        if value is None and default is None:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list, got {value!r}")
        return list(value) if isinstance(default, list) else tuple(value)
    return value


def _build_section(name: str, data: Any):
    cls = SECTIONS[name]
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{name} must be a mapping, got {data!r}")
    values: dict = {}
    preset = data.get("preset")
    if preset is not None and name in PRESETS:
        if preset not in PRESETS[name]:
            raise ConfigError(
                f"{name}.preset must be one of {', '.join(PRESETS[name])}; "
                f"got {preset!r}"
            )
        values.update(PRESETS[name][preset])
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {name}.{key}")
        values[key] = _coerce(f"{name}.{key}", value, getattr(defaults, key))
    return cls(**values)


def parse_run_config(data: dict) -> RunConfig:
    """Build a :class:`RunConfig` from a parsed YAML mapping."""
    top_defaults = RunConfig()
    values: dict = {}
    for key, value in data.items():
        if key in SECTIONS:
            values[key] = _build_section(key, value)
        elif key in ("seed", "log_level", "workers", "languages"):
            values[key] = _coerce(key, value, getattr(top_defaults, key))
        else:
            raise ConfigError(f"unknown config key: {key}")
    cfg = RunConfig(**values)
    if cfg.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {cfg.workers}")
    if len(set(cfg.languages)) != len(cfg.languages) or not cfg.languages:
        raise ConfigError(f"languages must be a non-empty unique list: {cfg.languages}")
    return cfg


def _set_dotted(data: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = data
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"cannot set {dotted}: {part} is not a section")
        node = child
    node[parts[-1]] = value


def apply_overrides(data: dict, overrides: List[str]) -> dict:
    """Apply ``section.key=value`` overrides; values are parsed as YAML."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(
                f"invalid YAML value in override {item!r}: {exc}"
            ) from exc
        _set_dotted(data, key.strip(), value)
    return data


def thread_seed(cfg: RunConfig, force: bool = False) -> RunConfig:
    """Give every section without its own seed the global seed."""
    for name in ("sampling", "gen", "train", "synth"):
        section = getattr(cfg, name)
        if force or section.seed is None:
            section.seed = cfg.seed
    return cfg


def load_run_config(
    path: str | None = None,
    overrides: List[str] | None = None,
    *,
    seed: int | None = None,
    workers: int | None = None,
    log_level: str | None = None,
    no_lang_conditioning: bool = False,
) -> RunConfig:
    """Resolve a run config with precedence flags > file > defaults.

    An explicitly named ``path`` must exist; the default CONFIG_PATH is
    optional.
    """
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        data = load_config(path)
    elif os.path.exists(CONFIG_PATH):
        data = load_config(CONFIG_PATH)
    else:
        data = {}
    data = apply_overrides(dict(data), overrides or [])
    if seed is not None:
        data["seed"] = seed
    if workers is not None:
        data["workers"] = workers
    if log_level is not None:
        data["log_level"] = log_level
    if no_lang_conditioning:
        _set_dotted(data, "model.conditioning_enabled", False)
    cfg = parse_run_config(data)
    return thread_seed(cfg, force=seed is not None)


def describe_keys() -> List[str]:
    """Return ``key = default`` lines for every config key."""
    lines = []
    top = RunConfig()
    for key in ("seed", "log_level", "workers", "languages"):
        lines.append(f"{key} = {getattr(top, key)!r}")
    for name, cls in SECTIONS.items():
        defaults = cls()
        for f in fields(cls):
            lines.append(f"{name}.{f.name} = {getattr(defaults, f.name)!r}")
    return lines
