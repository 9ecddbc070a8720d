"""Few-shot artefact detection for cardiac MR via k-space synthesis and meta-learning."""

__version__ = "0.1.0"
