"""Time-aware ECG + LGE-MRI fusion for myocardial scar segmentation."""

__version__ = "0.1.0"
