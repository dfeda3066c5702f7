"""dpimage: latent-space image privacy with calibrated Laplace noise.

Encode images to latent vectors, perturb them with noise calibrated by
feature-space sensitivity, decode back to images, and measure both the
privacy gained and the utility lost against blur/mosaic baselines.
"""

__version__ = "0.1.0"
