"""Event-stream classification with directly trained spiking networks.

Subpackages: event containers and binary IO, synthetic stream generation,
event-level augmentation, the spiking/dense model pair with hand-derived
backprop through time, an operation-count energy model, and cross-validated
benchmarking with OLS analysis of augmentation effects.
"""

__version__ = "0.1.0"
