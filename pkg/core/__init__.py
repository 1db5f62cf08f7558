"""Core modules for kmer-nematic.

This package holds the lattice model, the exact-enumeration oracle, the
grand-canonical sampler, the coarse-graining and the estimators.

Recommended invocation (ensures imports work reliably):
- python -m core.kmer_cli simulate --config run.json
- python -m core.kmer_cli enumerate --L 2 --k 2 --containment fully_contained
"""

__version__ = "0.1.0"
