"""detfill: detection-guided image inpainting.

A generator fills masked image regions; a pixel-wise artifact detector,
trained against the corruption mask as a weak label, scores every output
pixel with a valuation in [0, 1]. The valuation map is turned into a
per-pixel weight that rescales the generator's reconstruction loss, so
hard (artifact-prone) pixels cost more than easy ones. Two baseline
training modes (hard mask weighting, classic adversarial + reconstruction)
ship alongside for comparison.
"""

__version__ = "0.1.0"
