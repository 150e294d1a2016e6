"""Synthetic paired-site windows for tests and download-free experiments.

Each window pair starts from a latent trajectory z [latent_dim, T]:

* z[0] is a constant class level ``mean_separation * (k - (K - 1) / 2)``;
* z[j], j >= 1, is a sinusoid whose frequency and amplitude are fixed per
  (class, j) and whose phase is drawn per window.

The source and target sites observe the same z through two fixed mixing
matrices, plus independent Gaussian noise of standard deviation ``noise``.
The source matrix is drawn from the seed; its first column has entries of
magnitude in [0.5, 1] so the class level reaches every channel. The target
matrix reverses the channel order and negates the class-level column, so a
classifier trained on the source site inverts the class order on the target
site while the target stays a linear image of the same latent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from data.windows import WINDOW_LENGTH, PairedWindows

SYNTHETIC_RATE = 30.0


@dataclass(frozen=True)
class SyntheticConfig:
    num_classes: int = 5
    windows_per_class: int = 200
    source_channels: int = 9
    target_channels: int = 9
    latent_dim: int = 4
    noise: float = 0.05
    mean_separation: float = 1.0
    window_length: int = WINDOW_LENGTH
    sample_rate: float = SYNTHETIC_RATE

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.windows_per_class < 1 or self.window_length < 1:
            raise ValueError("windows_per_class and window_length must be positive")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if self.latent_dim > min(self.source_channels, self.target_channels):
            raise ValueError("latent_dim cannot exceed the channel count of either site")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(f"class_{k}" for k in range(self.num_classes))


def _mixing(rng: np.random.Generator, channels: int, latent_dim: int) -> np.ndarray:
    matrix = rng.normal(scale=1.0 / np.sqrt(latent_dim), size=(channels, latent_dim))
    matrix[:, 0] = rng.uniform(0.5, 1.0, size=channels) * rng.choice([-1.0, 1.0], size=channels)
    return matrix


def target_from_source(
    source: np.ndarray, channels: int, rng: np.random.Generator
) -> np.ndarray:
    """Target mixing built as a deliberately opposed view of the source site.

    Target channel i reads source channel ``C_S - 1 - i`` with the class-level
    column negated, so the class order seen by a source-site model is reversed
    on the target site. Channels beyond the source count are drawn fresh.
    """
    source_channels, latent_dim = source.shape
    shared = min(channels, source_channels)
    target = np.empty((channels, latent_dim))
    target[:shared] = source[::-1][:shared]
    target[:shared, 0] *= -1.0
    if channels > shared:
        target[shared:] = _mixing(rng, channels - shared, latent_dim)
    return target


def site_mixing(config: SyntheticConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """The (source, target) mixing matrices used by ``synth_paired_dataset``."""
    rng = np.random.default_rng([seed, 0])
    source = _mixing(rng, config.source_channels, config.latent_dim)
    target = target_from_source(source, config.target_channels, rng)
    return source, target


def class_signatures(config: SyntheticConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-(class, latent dim) frequencies in Hz and amplitudes."""
    rng = np.random.default_rng([seed, 1])
    shape = (config.num_classes, config.latent_dim)
    return rng.uniform(0.5, 3.0, size=shape), rng.uniform(0.5, 1.5, size=shape)


def class_level(config: SyntheticConfig, k: int) -> float:
    return config.mean_separation * (k - (config.num_classes - 1) / 2)


def synth_latents(config: SyntheticConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Latent trajectories [N, latent_dim, T] and their class labels, class-major."""
    freqs, amps = class_signatures(config, seed)
    rng = np.random.default_rng([seed, 2])
    t = np.arange(config.window_length) / config.sample_rate
    n = config.num_classes * config.windows_per_class
    latents = np.empty((n, config.latent_dim, config.window_length))
    labels = np.repeat(np.arange(config.num_classes), config.windows_per_class)
    for i, k in enumerate(labels):
        phases = rng.uniform(0.0, 2 * np.pi, size=config.latent_dim)
        latents[i] = amps[k][:, None] * np.sin(2 * np.pi * freqs[k][:, None] * t + phases[:, None])
        latents[i, 0] = class_level(config, int(k))
    return latents, labels


def synth_paired_dataset(config: SyntheticConfig, seed: int) -> PairedWindows:
    """Labeled source/target window pairs sharing a class-dependent latent."""
    source_mix, target_mix = site_mixing(config, seed)
    latents, labels = synth_latents(config, seed)
    noise_rng = np.random.default_rng([seed, 3])

    source = np.einsum("cl,nlt->nct", source_mix, latents)
    target = np.einsum("cl,nlt->nct", target_mix, latents)
    if config.noise > 0:
        source = source + noise_rng.normal(scale=config.noise, size=source.shape)
        target = target + noise_rng.normal(scale=config.noise, size=target.shape)

    n = len(labels)
    duration = config.window_length / config.sample_rate
    return PairedWindows(
        source=source.astype(np.float32),
        target=target.astype(np.float32),
        labels=labels.astype(np.int64),
        pair_ids=np.arange(n, dtype=np.int64),
        subjects=np.full(n, "synthetic", dtype=object),
        start_times=np.arange(n, dtype=np.float64) * duration,
        class_names=config.class_names,
        source_site="source",
        target_site="target",
    )
