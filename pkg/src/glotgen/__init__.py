"""glotgen: multilingual masked-token text-to-image modeling on a procedural
16x16 token-grid world, with exact oracle evaluation.

The package covers the full desk-scale pipeline: procedural scenes with
parallel six-language captions, a unified special/text/image vocabulary, a
NumPy decoder transformer with hand-written backprop, the masked-token
training curriculum with classifier-free guidance dropout, iterative
unmasking generation (plus inpainting and extrapolation), checkpoint
merging, and the CLC/CSS multilingual consistency metrics.
"""

__version__ = "0.1.0"

from . import (checkpoint, config, evaluation, imaging, merging, model,
               parallel, sampling, scene, training, vocab)

__all__ = ["checkpoint", "config", "evaluation", "imaging", "merging",
           "model", "parallel", "sampling", "scene", "training", "vocab",
           "__version__"]
