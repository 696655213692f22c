"""LATCH binary local feature descriptors."""

from latch.image import GrayImage, Window, gaussian_smooth, load_pgm, patch_ssd, sample_window
from latch.detector import Keypoint, harris_detect, intensity_centroid_orientation
from latch.descriptor import (
    ArrangementSet,
    BinaryDescriptor,
    ExtractOptions,
    TripletArrangement,
    default_arrangement,
    extract,
    extract_pixel_variant,
)
from latch.matching import Match, hamming, match_brute_force

__version__ = "0.1.0"

__all__ = [
    "ArrangementSet",
    "BinaryDescriptor",
    "ExtractOptions",
    "GrayImage",
    "Keypoint",
    "Match",
    "TripletArrangement",
    "Window",
    "default_arrangement",
    "extract",
    "extract_pixel_variant",
    "gaussian_smooth",
    "hamming",
    "harris_detect",
    "intensity_centroid_orientation",
    "load_pgm",
    "match_brute_force",
    "patch_ssd",
    "sample_window",
]
