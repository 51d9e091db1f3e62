"""Frozen experiment presets used by the scripts and the acceptance suite.

Two benchmarks on planted synthetic data, both from the same generator
family (shared latent split into context + fine coordinates, hard negatives
perturbing only the fine ones):

* metric screen: three-setting alignment grid (match / easy / hard) at
  n=500; global scores should rate hard non-matches nearly as high as
  matches while easy non-matches collapse to zero.
* loss ordering: con vs negcon vs spread retrieval benchmark at n=1000,
  100 epochs, batch 32, seeds 5/42/55. Training uses the standard
  (positive-in-denominator) contrastive form and dropout 0.1; the spread
  alpha (0.75) was selected on validation recall with the alpha-sweep
  facility, since the best context/contrast trade-off is setting-dependent.
  Calibrated outcome: spread ~0.93 > negcon ~0.93 > con ~0.81 mean binary
  test recall, with spread - con >= 0.12.
"""

from __future__ import annotations

from .embed_io import SynthConfig
from .losses import LossConfig
from .nnet import AutoencoderConfig
from .trainer import TrainConfig

BENCHMARK_SEEDS = (5, 42, 55)

SPREAD_BENCHMARK_ALPHA = 0.75


def metric_screen_synth(seed: int) -> SynthConfig:
    return SynthConfig(
        n=500,
        latent_dim=16,
        context_dims=12,
        fine_dims=4,
        d_v=64,
        d_l=96,
        noise_std=0.05,
        hard_delta=1.0,
        seed=seed,
    )


def benchmark_synth(seed: int) -> SynthConfig:
    return SynthConfig(
        n=1000,
        latent_dim=16,
        context_dims=12,
        fine_dims=4,
        d_v=64,
        d_l=96,
        noise_std=0.05,
        hard_delta=1.0,
        seed=seed,
    )


def benchmark_train_config(objective: str) -> TrainConfig:
    synth = benchmark_synth(0)
    alpha = SPREAD_BENCHMARK_ALPHA if objective == "spread" else 0.5
    return TrainConfig(
        ae_cfg_vision=AutoencoderConfig(synth.d_v, [128, 128], 32, dropout=0.1),
        ae_cfg_language=AutoencoderConfig(synth.d_l, [128, 128], 32, dropout=0.1),
        epochs=100,
        batch_size=32,
        seeds=BENCHMARK_SEEDS,
        lr0=3e-3,
        loss_cfg=LossConfig(
            objective=objective,
            alpha=alpha,
            include_positive_in_denominator=True,
        ),
    )
