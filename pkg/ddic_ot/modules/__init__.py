"""
DDIC-OT Modules Package

This package contains the 6 pipeline modules:

1. incomplete - Masks, MCAR generation, fills and imputation
2. model - Autoencoder + centroid parameters, soft assignments and losses
3. trainer - k-means, Adam, pretraining and joint fine-tuning
4. evaluation - ACC / NMI / Purity and run aggregation
5. data - IDX and CSV loaders, normalization, synthetic blobs
6. experiment - Seeded (method x ratio x run) sweeps and result tables

Example usage:
    >>> from ddic_ot.modules import data, incomplete, trainer
    >>> blobs = data.make_blobs(600, 50, 3, separation=10.0)
    >>> ds = incomplete.apply_mask(blobs.features, incomplete.generate_mask(600, 50, 0.3, seed=1), blobs.labels)

For a complete workflow example, see examples/quick_start.py
"""

from ddic_ot.modules import (
    incomplete,
    model,
    trainer,
    evaluation,
    data,
    experiment
)

__all__ = [
    'incomplete',
    'model',
    'trainer',
    'evaluation',
    'data',
    'experiment'
]

# Module descriptions for documentation
MODULE_DESCRIPTIONS = {
    'incomplete': 'Represent incomplete data, draw MCAR masks and fill missing entries',
    'model': 'Encode, decode and softly assign samples to centroids; compute the losses',
    'trainer': 'Pretrain the autoencoder, initialize centroids and fine-tune jointly',
    'evaluation': 'Score clusterings against ground truth and aggregate runs',
    'data': 'Load IDX/CSV datasets or generate Gaussian blobs',
    'experiment': 'Run seeded missing-ratio sweeps and write result tables'
}
