"""Detection post-processing: NMS variants, anchor estimation and mAP evaluation."""

__version__ = "0.1.0"
