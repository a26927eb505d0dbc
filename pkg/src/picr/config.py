"""Run configuration, flat ``section.key = value`` text format, presets and ablation table."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .attention import MASK_VALUES
from .cmpi import INTERACTIONS
from .errors import ConfigError


@dataclass
class ModelConfig:
    input_size: int = 224
    embed_dim: int = 96
    heads: tuple = (3, 6, 12, 24)
    window: int = 7
    mask_value: float = -100.0
    cmpi_window: int = 1
    cmpi_heads: tuple = (3, 6, 12, 24)
    mlp_act: str = "relu"
    rel_pos_bias: bool = False
    decoder_shift: bool = True
    cnnr_width: int = 64
    vgg_widths: tuple = (64, 128)
    ca_reduction: int = 16
    cnnr_upsample: str = "nearest"
    rm_prenorm: bool = True
    rm_residual: bool = True


@dataclass
class AblationConfig:
    interaction: str = "cmpi"
    rm_enabled: bool = True
    single_step: bool = False
    use_m1: bool = True
    use_m2: bool = True
    use_guidance: bool = True
    decoder: str = "transformer"
    cnnr_enabled: bool = True
    rm_share_step_weights: bool = False
    cnnr_freeze: bool = False


@dataclass
class OptimConfig:
    lr: float = 1e-4
    batch: int = 32
    epochs: int = 90
    decay_every: int = 40
    decay_factor: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 0
    augment: bool = True
    checkpoint_every: int = 0


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0

    def validate(self) -> "Config":
        m, a = self.model, self.ablation
        if m.input_size % 32:
            raise ConfigError(f"model.input_size {m.input_size} must be a multiple of 32")
        if len(m.heads) != 4 or len(m.cmpi_heads) != 4:
            raise ConfigError("model.heads and model.cmpi_heads need one entry per stage (4)")
        for i, (h, hc) in enumerate(zip(m.heads, m.cmpi_heads)):
            dim = m.embed_dim * 2 ** i
            if dim % h or dim % hc:
                raise ConfigError(f"stage {i + 1} width {dim} is not divisible by heads {h}/{hc}")
        if m.mask_value not in MASK_VALUES:
            raise ConfigError(f"model.mask_value must be one of {MASK_VALUES}, got {m.mask_value}")
        if m.cmpi_window not in (1, 3, 5):
            raise ConfigError(f"model.cmpi_window must be 1, 3 or 5, got {m.cmpi_window}")
        if a.interaction not in INTERACTIONS:
            raise ConfigError(f"ablation.interaction must be one of {INTERACTIONS}, got {a.interaction!r}")
        if a.decoder not in ("transformer", "conv"):
            raise ConfigError(f"ablation.decoder must be transformer or conv, got {a.decoder!r}")
        if m.mlp_act not in ("relu", "gelu"):
            raise ConfigError(f"model.mlp_act must be relu or gelu, got {m.mlp_act!r}")
        if m.cnnr_upsample not in ("nearest", "bilinear"):
            raise ConfigError(f"model.cnnr_upsample must be nearest or bilinear, got {m.cnnr_upsample!r}")
        return self

    # -- flat text form ------------------------------------------------
    def to_dict(self) -> dict[str, object]:
        flat = {}
        for sec in ("model", "ablation", "optim"):
            for f in dataclasses.fields(getattr(self, sec)):
                flat[f"{sec}.{f.name}"] = getattr(getattr(self, sec), f.name)
        flat["seed"] = self.seed
        return flat

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.to_dict().items())

    def set(self, key: str, raw) -> None:
        if key == "seed":
            self.seed = int(raw)
            return
        sec, _, name = key.partition(".")
        target = getattr(self, sec, None) if sec in ("model", "ablation", "optim") else None
        if target is None or name not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(target, name)
        setattr(target, name, raw if not isinstance(raw, str) else _parse(raw, current, key))

    def section(self, name: str) -> dict:
        return dataclasses.asdict(getattr(self, name))

    def copy(self) -> "Config":
        return loads(self.dumps())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value {raw!r} for {key}") from exc
    return raw


def loads(text: str, base: Config | None = None) -> Config:
    cfg = base.copy() if base is not None else Config()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        cfg.set(key.strip(), value.strip())
    return cfg


def load(path, base: Config | None = None) -> Config:
    return loads(Path(path).read_text(), base)


# ----------------------------------------------------------------------
# presets
# ----------------------------------------------------------------------
def faithful() -> Config:
    """Full-size settings: 224 input, Swin-T widths, 90 epochs with the step decay."""
    return Config().validate()


def toy() -> Config:
    """Desk-scale settings used by the tests: 64x64 input, width 16, 300 steps."""
    cfg = Config()
    m = cfg.model
    m.input_size = 64
    m.embed_dim = 16
    m.heads = (1, 2, 4, 8)
    m.cmpi_heads = (1, 2, 4, 8)
    m.window = 4
    m.cnnr_width = 16
    m.ca_reduction = 4
    o = cfg.optim
    o.batch = 4
    o.lr = 2e-3
    o.epochs = 150
    o.decay_every = 100
    o.max_steps = 300
    return cfg.validate()


PRESETS = {"toy": toy, "faithful": faithful}

# ablation id -> config assignments (id 0 is the full model)
ABLATIONS: dict[int, dict[str, object]] = {
    0: {},
    1: {"ablation.interaction": "add"},
    2: {"ablation.interaction": "mul"},
    3: {"ablation.interaction": "concat"},
    4: {"ablation.interaction": "cross_attention"},
    5: {"ablation.decoder": "conv"},
    6: {"ablation.cnnr_enabled": False},
    7: {"ablation.rm_enabled": False},
    8: {"ablation.single_step": True},
    9: {"ablation.use_m1": False, "ablation.use_m2": False},
    10: {"ablation.use_m1": False},
    11: {"ablation.use_m2": False},
    12: {"ablation.use_guidance": False},
    13: {"model.cmpi_window": 3},
    14: {"model.cmpi_window": 5},
    15: {"ablation.interaction": "conv1x1"},
}

ABLATION_NAMES = {
    0: "full model", 1: "w/ addition", 2: "w/ multiplication", 3: "w/ concatenation",
    4: "w/ cross-attention", 5: "w/o transformer decoder", 6: "w/o CNNR", 7: "w/o RM",
    8: "w/ single-step", 9: "w/o M1 & M2", 10: "w/o M1", 11: "w/o M2", 12: "w/o guidance vectors",
    13: "interaction window 3", 14: "interaction window 5", 15: "1x1 convolution",
}


def apply_ablation(cfg: Config, ablation_id: int) -> Config:
    if ablation_id not in ABLATIONS:
        raise ConfigError(f"unknown ablation id {ablation_id}; valid ids are 0-15")
    out = cfg.copy()
    for k, v in ABLATIONS[ablation_id].items():
        out.set(k, v)
    return out.validate()


def ablation_help() -> str:
    lines = []
    for i, assign in ABLATIONS.items():
        desc = ", ".join(f"{k}={_fmt(v)}" for k, v in assign.items()) or "(defaults)"
        lines.append(f"  {i:2d}  {ABLATION_NAMES[i]:<26s} {desc}")
    return "\n".join(lines)
