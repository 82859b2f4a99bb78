# SPDX-License-Identifier: Apache-2.0
"""First-token guardrail classification: prompt rendering, policy checks,
decision rule and training-signal helpers."""

from ._core import (
    TierguardError,
    category_ids,
    check_policy,
    classify_request,
    combined_distill_loss,
    decide,
    f1,
    grpo_reward,
    kl_forward,
    kl_reverse,
    parse_verifier_reply,
    render_prompt,
    renormalize,
)

__all__ = [
    "TierguardError",
    "category_ids",
    "check_policy",
    "classify_request",
    "combined_distill_loss",
    "decide",
    "f1",
    "grpo_reward",
    "kl_forward",
    "kl_reverse",
    "parse_verifier_reply",
    "render_prompt",
    "renormalize",
]
__version__ = "0.1.0"
