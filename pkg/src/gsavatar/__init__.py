"""gsavatar: clothed-human Gaussian-splat avatars with a universal prior.

Pipeline stages: procedural corpus generation, universal prior training on
front/back Gaussian maps, diffusion-based texture inpainting, and
personalization of the prior to a single monocular sequence.
"""

__version__ = "0.1.0"
