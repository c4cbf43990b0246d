"""facediff: multi-modal conditional latent diffusion over a frozen procedural
face generator, with a from-scratch autodiff core, an optimization baseline,
and an evaluation suite."""

__version__ = "0.1.0"
