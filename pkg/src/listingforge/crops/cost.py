import statistics
from dataclasses import dataclass

TOKENS_PER_IMAGE = 256


@dataclass(frozen=True)
class CostEstimate:
    n_images: int
    tokens_per_image: int = TOKENS_PER_IMAGE

    @property
    def total_visual_tokens(self) -> int:
        return self.n_images * self.tokens_per_image


def estimate_cost(n_images: int, tokens_per_image: int = TOKENS_PER_IMAGE) -> CostEstimate:
    if n_images < 0 or tokens_per_image < 0:
        raise ValueError("counts must be non-negative")
    return CostEstimate(n_images, tokens_per_image)


def _median(values):
    m = statistics.median(values)
    return int(m) if float(m).is_integer() else m


def cost_summary(plans) -> dict:
    """Visual-token totals before/after consolidation across crop plans.

    ``plans`` are CropPlan objects or their dict form. The ratio is total
    tokens before divided by total tokens after.
    """
    plans = [p if isinstance(p, dict) else p.to_dict() for p in plans]
    if not plans:
        raise ValueError("cost_summary needs at least one plan")
    items = []
    for p in plans:
        tpi = p.get("tokens_per_image", TOKENS_PER_IMAGE)
        before = estimate_cost(p["images_before"], tpi).total_visual_tokens
        after = estimate_cost(p["images_after"], tpi).total_visual_tokens
        items.append({
            "item_id": p["item_id"],
            "images_before": p["images_before"],
            "images_after": p["images_after"],
            "visual_tokens_before": before,
            "visual_tokens_after": after,
            "ratio": before / after if after else None,
        })
    total_before = sum(i["visual_tokens_before"] for i in items)
    total_after = sum(i["visual_tokens_after"] for i in items)
    before_counts = [i["images_before"] for i in items]
    after_counts = [i["images_after"] for i in items]
    return {
        "n_items": len(items),
        "visual_tokens_before": total_before,
        "visual_tokens_after": total_after,
        "token_ratio": total_before / total_after if total_after else None,
        "images_per_item_before": {"median": _median(before_counts), "max": max(before_counts)},
        "images_per_item_after": {"median": _median(after_counts), "max": max(after_counts)},
        "items": items,
    }
