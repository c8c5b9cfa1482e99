from .cost import TOKENS_PER_IMAGE, CostEstimate, cost_summary, estimate_cost
from .geometry import BoundingBox, GeometryError, enclosing_square, expand_box, merge_overlapping
from .phash import ImageDecodeError, PerceptualHash, dedup, hamming, phash
from .plan import CropPlan, CropResult, build_crop_plan, read_plans, run_crops

__all__ = [
    "TOKENS_PER_IMAGE", "CostEstimate", "cost_summary", "estimate_cost",
    "BoundingBox", "GeometryError", "enclosing_square", "expand_box", "merge_overlapping",
    "ImageDecodeError", "PerceptualHash", "dedup", "hamming", "phash",
    "CropPlan", "CropResult", "build_crop_plan", "read_plans", "run_crops",
]
