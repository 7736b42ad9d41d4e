"""Approximate nearest-neighbor search by the index and sign of the largest components."""

from .cones import ConeKey, classify, cone_count, probe_sequence
from .dataset import GroundTruth, SyntheticSpec, VectorSet, density, gen_synthetic, linear_scan_nn
from .index import RosannaIndex, SearchScratch, build, search, search_batch, search_knn
from .rotations import BasisSet, OrthoBasis, gen_bases, project

__version__ = "0.1.0"

__all__ = [
    "BasisSet", "ConeKey", "GroundTruth", "OrthoBasis", "RosannaIndex", "SearchScratch",
    "SyntheticSpec", "VectorSet", "build", "classify", "cone_count", "density",
    "gen_bases", "gen_synthetic", "linear_scan_nn", "probe_sequence", "project",
    "search", "search_batch", "search_knn",
]
