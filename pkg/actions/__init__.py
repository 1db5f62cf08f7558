"""Small CLIs (and importable helpers) for kmer-nematic.

Each action is runnable on its own (`python -m actions.simulate ...`) and is
also dispatched by `core.kmer_cli`.
"""
