"""Run configuration: flat JSON with strict schema validation."""

import json
from dataclasses import dataclass, fields

from .data import DEFAULT_MAX_SEQ_LEN


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    mixture_count: int = 20
    latent_dim: int = 128
    encoder_hidden: int = 256
    decoder_hidden: int = 512
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN
    # refiner network
    conv_depths: list = None
    conv_strides: list = None
    dense_widths: list = None
    blend_alpha: float = 0.5
    # sampling
    temperature: float = 1.0
    # training
    learning_rate: float = 1e-6
    kl_weight: float = 1.0
    batch_size: int = 32
    train_steps: int = 500
    seed: int = 0
    # data splits
    train_size: int = 70000
    test_size: int = 2500
    val_size: int = 2500

    def __post_init__(self):
        if self.conv_depths is None:
            self.conv_depths = [3, 128, 128, 256, 256, 512]
        if self.conv_strides is None:
            self.conv_strides = [1, 2, 1, 2, 2, 2]
        if self.dense_widths is None:
            self.dense_widths = [1024, 512]
        self._validate()

    def _validate(self):
        positive_ints = (
            "mixture_count", "latent_dim", "encoder_hidden", "decoder_hidden",
            "max_seq_len", "batch_size", "train_steps", "train_size",
            "test_size", "val_size",
        )
        for name in positive_ints:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        for name in ("learning_rate", "temperature"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or value <= 0:
                raise ConfigError(f"{name} must be positive, got {value!r}")
        if not isinstance(self.kl_weight, (int, float)) or self.kl_weight < 0:
            raise ConfigError(f"kl_weight must be nonnegative, got {self.kl_weight!r}")
        if not 0.0 <= self.blend_alpha <= 1.0:
            raise ConfigError(f"blend_alpha must lie in [0, 1], got {self.blend_alpha!r}")
        for name in ("conv_depths", "conv_strides"):
            value = getattr(self, name)
            if len(value) != 6 or any(not isinstance(v, int) or v <= 0 for v in value):
                raise ConfigError(f"{name} must be 6 positive integers, got {value!r}")
        if any(s not in (1, 2) for s in self.conv_strides):
            raise ConfigError(f"conv_strides entries must be 1 or 2, got {self.conv_strides!r}")
        if len(self.dense_widths) != 2 or any(not isinstance(v, int) or v <= 0 for v in self.dense_widths):
            raise ConfigError(f"dense_widths must be 2 positive integers, got {self.dense_widths!r}")

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not valid JSON ({err})") from err
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown keys: {', '.join(unknown)}")
        return cls(**raw)

    def vae_config(self):
        from .vae import VAEConfig

        return VAEConfig(
            latent_dim=self.latent_dim,
            encoder_hidden=self.encoder_hidden,
            decoder_hidden=self.decoder_hidden,
            mixture_count=self.mixture_count,
            max_seq_len=self.max_seq_len,
        )

    def refiner_config(self):
        from .refiner import RefinerConfig

        return RefinerConfig(
            conv_depths=tuple(self.conv_depths),
            conv_strides=tuple(self.conv_strides),
            dense_widths=tuple(self.dense_widths),
            mixture_count=self.mixture_count,
            blend_alpha=self.blend_alpha,
        )
