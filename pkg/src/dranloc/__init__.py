"""Visual localization: global retrieval, hypercolumn re-ranking with PnP, and
coarse-to-fine feature-metric pose alignment, plus a synthetic benchmark."""

from .align import AlignConfig, ReferenceView, optimize_level, optimize_pyramid
from .evaluation import PipelineConfig, QueryOutcome, Thresholds, recall, reprojection_loss, run_pipeline
from .feature import FeatureMap, FeaturePyramid, Hypercolumn, UncertaintyMap, build_hypercolumn
from .geometry import PinholeCamera, PoseSE3, pose_error
from .rerank import RansacConfig, RerankConfig, pnp_ransac, rerank_candidates
from .retrieval import GemParams, GlobalDescriptor, gem_pool, rank_keyframes
from .scene_map import Keyframe, SceneMap, ScenePoint, load_map, save_map

__version__ = "0.1.0"

__all__ = [
    "AlignConfig", "ReferenceView", "optimize_level", "optimize_pyramid",
    "PipelineConfig", "QueryOutcome", "Thresholds", "recall", "reprojection_loss", "run_pipeline",
    "FeatureMap", "FeaturePyramid", "Hypercolumn", "UncertaintyMap", "build_hypercolumn",
    "PinholeCamera", "PoseSE3", "pose_error",
    "RansacConfig", "RerankConfig", "pnp_ransac", "rerank_candidates",
    "GemParams", "GlobalDescriptor", "gem_pool", "rank_keyframes",
    "Keyframe", "SceneMap", "ScenePoint", "load_map", "save_map",
]
