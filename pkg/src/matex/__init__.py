"""Source-tracked multi-stage extraction of material records from article
text, plus feature- and tuple-level evaluation against ground truth."""

__version__ = "0.1.0"
