"""Table extraction from page images: mask post-processing, region cleanup,
OCR ingestion, column segmentation models and grid alignment."""

__version__ = "0.1.0"
