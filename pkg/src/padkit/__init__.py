"""Face presentation-attack detection toolkit.

Modules:
    vit        register-token vision transformer
    train      losses, schedules, freeze policies, and the fit loop
    augment    FAS-style label-aware augmentation operators
    metrics    APCER / BPCER / ACER / AUC / EER and report bundling
    data       manifests, image IO, normalization stats
    weights    checkpoint save/load with config sidecars
    synthetic  procedural toy data for end-to-end checks
    cli        the ``padkit`` command-line entry point
"""

__version__ = "0.1.0"
