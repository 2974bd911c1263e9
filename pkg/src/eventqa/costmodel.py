"""API spend estimation from token tallies and a pricing table.

All arithmetic is exact decimal: cost = input_tokens/1e6 * input price +
output_tokens/1e6 * output price. Prices live in a dated config file, not
in code; they change too often to hardcode. Rounding to cents happens only
at display time, the exact value is kept.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Sequence

from .promptkit import PromptRecord

MILLION = Decimal(1_000_000)
CENT = Decimal("0.01")


class CostError(Exception):
    pass


@dataclass(frozen=True)
class ModelPricing:
    input_per_million: Decimal
    output_per_million: Decimal

    def __post_init__(self) -> None:
        if self.input_per_million < 0 or self.output_per_million < 0:
            raise ValueError("prices must be non-negative")


@dataclass(frozen=True)
class PricingTable:
    label: str
    entries: dict[str, ModelPricing]

    def for_model(self, model_name: str) -> ModelPricing:
        try:
            return self.entries[model_name]
        except KeyError:
            raise CostError(f"no pricing for model {model_name!r} in table {self.label!r}") from None


@dataclass(frozen=True)
class CostEstimate:
    model_name: str
    input_tokens: int
    output_tokens: int
    total_cost: Decimal

    @property
    def display_cost(self) -> Decimal:
        return self.total_cost.quantize(CENT, rounding=ROUND_HALF_UP)

    def to_dict(self) -> dict:
        return {
            "model_name": self.model_name,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "total_cost": str(self.total_cost),
            "display_cost": str(self.display_cost),
        }


def load_pricing(path: str | Path) -> PricingTable:
    """Load a pricing config file: {"label": ..., "models": {name: {input_per_million, output_per_million}}}.

    Prices are read as strings so they stay exact decimals.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = {
        name: ModelPricing(
            input_per_million=Decimal(str(prices["input_per_million"])),
            output_per_million=Decimal(str(prices["output_per_million"])),
        )
        for name, prices in raw["models"].items()
    }
    return PricingTable(label=str(raw.get("label", "")), entries=entries)


def estimate_cost(input_tokens: int, output_tokens: int, model_name: str, pricing: PricingTable) -> CostEstimate:
    """Exact linear cost of a token tally under a pricing table."""
    if input_tokens < 0 or output_tokens < 0:
        raise CostError("token counts must be non-negative")
    prices = pricing.for_model(model_name)
    total = (
        Decimal(input_tokens) / MILLION * prices.input_per_million
        + Decimal(output_tokens) / MILLION * prices.output_per_million
    )
    return CostEstimate(
        model_name=model_name,
        input_tokens=input_tokens,
        output_tokens=output_tokens,
        total_cost=total,
    )


def project_run_cost(
    prompts: Sequence[PromptRecord],
    expected_output_tokens: int,
    model_name: str,
    pricing: PricingTable,
) -> CostEstimate:
    """Project the cost of running a built prompt manifest.

    Input tokens are the sum of per-prompt counts; every prompt is assumed
    to produce ``expected_output_tokens`` of output.
    """
    if not prompts:
        raise CostError("cannot project cost of an empty prompt list")
    input_tokens = sum(record.token_count for record in prompts)
    output_tokens = len(prompts) * expected_output_tokens
    return estimate_cost(input_tokens, output_tokens, model_name, pricing)
