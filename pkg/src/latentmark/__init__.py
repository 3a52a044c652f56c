"""latentmark: a latent-space generative watermarking laboratory.

Embeds, detects, attacks and evaluates watermarks carried by the initial
latent of a diffusion-style generator, with the generator itself replaced by
pluggable simulated channels so every statistical claim can be checked at
desk scale.
"""

__version__ = "0.1.0"
