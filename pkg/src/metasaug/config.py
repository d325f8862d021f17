"""Training configuration, presets and the flat ``key = value`` format.

Keys (one per line, ``#`` starts a comment)::

    base_loss          ce | focal | ldam
    focal_gamma        focal exponent (>= 0)
    ldam_max_margin    margin of the rarest class for ldam
    lam                ISDA augmentation strength (>= 0)
    beta               effective-number beta in [0, 1); empty = (N-1)/N
    normalize_weights  rescale class weights to mean 1
    reweight           use class weights at all
    reweight_start     step after which weights switch on; empty = t1
    isda               off | estimated | frozen | meta   (phase 2 augmentation)
    warmup_loss        ce | base   (phase 1 loss)
    lr, momentum, weight_decay
    schedule           step:factor pairs, e.g. "800:0.1,900:0.1"
    gamma              covariance step size
    t1, t2             end of phase 1 and of training, in steps
    batch_size, val_batch_size (0 = min(10 C, |meta_val|))
    seed
    psd_policy         project_each_update | none
    sigma_init         stats | zero
    unbiased_cov       divide scatter by N-1 instead of N
    reduction          sum | mean
    hypergrad          analytic | fd
    fd_h               finite-difference step for hypergrad = fd
    freeze_features    keep hidden layers fixed in phase 2
    plain_final_step   final phase-2 update without momentum/weight decay
    hidden             comma-separated hidden widths, empty for none
    ablation           none | no-meta | no-reweight
"""

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

ISDA_MODES = ("off", "estimated", "frozen", "meta")
ABLATIONS = ("none", "no-meta", "no-reweight")


@dataclass(frozen=True)
class TrainConfig:
    base_loss: str = "ce"
    focal_gamma: float = 1.0
    ldam_max_margin: float = 0.5
    lam: float = 0.5
    beta: float = None
    normalize_weights: bool = True
    reweight: bool = False
    reweight_start: int = None
    isda: str = "off"
    warmup_loss: str = "base"
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: tuple = ()
    gamma: float = 100.0
    t1: int = 1500
    t2: int = 1500
    batch_size: int = 100
    val_batch_size: int = 0
    seed: int = 0
    psd_policy: str = "project_each_update"
    sigma_init: str = "stats"
    unbiased_cov: bool = False
    reduction: str = "mean"
    hypergrad: str = "analytic"
    fd_h: float = 1e-5
    freeze_features: bool = True
    plain_final_step: bool = False
    hidden: tuple = ()
    ablation: str = "none"

    def validate(self):
        problems = []

        def need(ok, key, msg):
            if not ok:
                problems.append(f"{key}: {msg}")

        need(self.base_loss in ("ce", "focal", "ldam"), "base_loss", "must be ce, focal or ldam")
        need(self.focal_gamma >= 0, "focal_gamma", "must be >= 0")
        need(self.ldam_max_margin > 0, "ldam_max_margin", "must be > 0")
        need(self.lam >= 0, "lam", "must be >= 0")
        need(self.beta is None or 0 <= self.beta < 1, "beta", "must lie in [0, 1)")
        need(self.reweight_start is None or self.reweight_start >= 0, "reweight_start", "must be >= 0")
        need(self.isda in ISDA_MODES, "isda", f"must be one of {', '.join(ISDA_MODES)}")
        need(self.warmup_loss in ("ce", "base"), "warmup_loss", "must be ce or base")
        need(self.lr > 0, "lr", "must be > 0")
        need(0 <= self.momentum < 1, "momentum", "must lie in [0, 1)")
        need(self.weight_decay >= 0, "weight_decay", "must be >= 0")
        need(all(s >= 0 and f > 0 for s, f in self.schedule), "schedule", "needs step >= 0 and factor > 0")
        need(self.gamma >= 0, "gamma", "must be >= 0")
        need(self.t1 >= 0, "t1", "must be >= 0")
        need(self.t1 <= self.t2, "t2", f"must be >= t1 ({self.t1})")
        need(self.batch_size > 0, "batch_size", "must be > 0")
        need(self.val_batch_size >= 0, "val_batch_size", "must be >= 0")
        need(self.psd_policy in ("project_each_update", "none"), "psd_policy", "must be project_each_update or none")
        need(self.sigma_init in ("stats", "zero"), "sigma_init", "must be stats or zero")
        need(self.reduction in ("sum", "mean"), "reduction", "must be sum or mean")
        need(self.hypergrad in ("analytic", "fd"), "hypergrad", "must be analytic or fd")
        need(self.fd_h > 0, "fd_h", "must be > 0")
        need(all(h > 0 for h in self.hidden), "hidden", "widths must be positive")
        need(self.ablation in ABLATIONS, "ablation", f"must be one of {', '.join(ABLATIONS)}")
        need(
            not (self.hypergrad == "analytic" and not self.freeze_features and self.hidden and self.isda == "meta"),
            "hypergrad",
            "analytic mode requires freeze_features with hidden layers; use fd",
        )
        if problems:
            raise ConfigError(problems)
        return self

    def resolved(self):
        """Apply the ablation flag, returning the effective configuration."""
        cfg = self
        if cfg.ablation == "no-meta" and cfg.isda == "meta":
            cfg = dataclasses.replace(cfg, isda="frozen")
        elif cfg.ablation == "no-reweight":
            cfg = dataclasses.replace(cfg, reweight=False)
        return cfg

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "schedule":
                v = [list(e) for e in v]
            elif f.name == "hidden":
                v = list(v)
            out[f.name] = v
        return out

    def to_text(self):
        return "".join(f"{k} = {format_value(k, getattr(self, k))}\n" for k in (f.name for f in fields(self)))


PRESETS = {
    "ce": dict(),
    "cb-ce": dict(reweight=True, reweight_start=0),
    "focal": dict(base_loss="focal"),
    "cb-focal": dict(base_loss="focal", reweight=True, reweight_start=0),
    "ldam": dict(base_loss="ldam"),
    "ldam-drw": dict(base_loss="ldam", reweight=True, reweight_start=1200),
    "isda-fixed": dict(t1=1000, isda="estimated", reweight=True, warmup_loss="ce"),
    "metasaug-ce": dict(t1=1000, isda="meta", reweight=True, warmup_loss="ce"),
    "metasaug-focal": dict(t1=1000, base_loss="focal", isda="meta", reweight=True, warmup_loss="ce"),
    "metasaug-ldam": dict(t1=1000, base_loss="ldam", isda="meta", reweight=True, warmup_loss="ce"),
}
PRESETS["ce-only"] = PRESETS["ce"]


def preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigError([f"preset: unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}"])
    return build({**PRESETS[name], **overrides})


def build(values):
    """TrainConfig from a mapping, collecting every bad key before raising."""
    names = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError([f"{k}: unknown key" for k in unknown])
    return TrainConfig(**values).validate()


_FIELD_TYPES = {f.name: f for f in fields(TrainConfig)}
_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def parse_value(key, text):
    text = text.strip()
    default = _FIELD_TYPES[key].default
    if key == "schedule":
        pairs = []
        for item in filter(None, (t.strip() for t in text.split(","))):
            step, factor = item.split(":")
            pairs.append((int(step), float(factor)))
        return tuple(pairs)
    if key == "hidden":
        return tuple(int(t) for t in text.split(",") if t.strip())
    if key in ("beta", "reweight_start"):
        if text in ("", "none", "None"):
            return None
        return float(text) if key == "beta" else int(text)
    if isinstance(default, bool):
        if text.lower() not in _BOOL:
            raise ValueError(f"expected a boolean, got {text!r}")
        return _BOOL[text.lower()]
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def format_value(key, value):
    if key == "schedule":
        return ",".join(f"{s}:{f!r}" for s, f in value)
    if key == "hidden":
        return ",".join(str(h) for h in value)
    if value is None:
        return ""
    return str(value).lower() if isinstance(value, bool) else str(value)


def parse_pairs(pairs):
    """Typed values from ``(key, text)`` pairs, collecting every problem."""
    values, problems = {}, []
    for key, text in pairs:
        if key not in _FIELD_TYPES:
            problems.append(f"{key}: unknown key")
            continue
        try:
            values[key] = parse_value(key, text)
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
    if problems:
        raise ConfigError(problems)
    return values


def read_config_text(text):
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"line {lineno}: expected 'key = value'"])
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value))
    return parse_pairs(pairs)


def load_config(path):
    return read_config_text(Path(path).read_text())
