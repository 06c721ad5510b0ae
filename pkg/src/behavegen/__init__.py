"""Desk-scale text-to-behavior generation pipeline.

Submodules:
    geometry     latent-trajectory geometry and piecewise-constant compression
    world        synthetic control stand-in, latent extraction, datasets
    nn           hand-written layers and the Adam optimiser
    bottleneck   variational compression of latent trajectories with text alignment
    flow         flow-matching generator over compact programs
    composition  prompt splitting and latent stitching
    metrics      evaluation metrics and reports
    theory       numerical verification of the approximation and retrieval bounds
    cli          command-line entry points
"""

__version__ = "0.1.0"
