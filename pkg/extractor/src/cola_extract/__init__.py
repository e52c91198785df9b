"""Causal-LM activation extraction into the calibration toolkit's container."""

from .extractor import ExtractionReport, ExtractionSpec, extract, read_text_dataset, write_container

__version__ = "0.1.0"
