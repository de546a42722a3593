from .base import BaseSelector
from .baselines import (
    NonCriticalSelector,
    PerplexitySelector,
    RandomSelector,
    full_selection,
    perplexity,
    select_noncritical,
    select_random,
    select_top_perplexity,
)
from .llm import (
    EndpointConfig,
    LLMSelector,
    ResponseCache,
    SelectorPromptConfig,
    SelectorResponse,
    build_prompt,
    enforce_cap,
    parse_response,
    select_with_llm,
)
from .value import (
    NoisyShortestPathPolicy,
    RolloutPolicy,
    UniformRandomPolicy,
    ValueGapSelector,
    ValueProfile,
    build_value_selection,
    compute_value_profile,
    discounted_values,
    estimate_step_reward,
    exact_state_values,
    exact_step_outcomes,
    flag_by_value_gap,
    load_profiles,
    write_profiles,
)

__all__ = [
    "BaseSelector",
    "EndpointConfig",
    "LLMSelector",
    "NoisyShortestPathPolicy",
    "NonCriticalSelector",
    "PerplexitySelector",
    "RandomSelector",
    "ResponseCache",
    "RolloutPolicy",
    "SelectorPromptConfig",
    "SelectorResponse",
    "UniformRandomPolicy",
    "ValueGapSelector",
    "ValueProfile",
    "build_prompt",
    "build_value_selection",
    "compute_value_profile",
    "discounted_values",
    "enforce_cap",
    "estimate_step_reward",
    "exact_state_values",
    "exact_step_outcomes",
    "flag_by_value_gap",
    "full_selection",
    "load_profiles",
    "parse_response",
    "perplexity",
    "select_noncritical",
    "select_random",
    "select_top_perplexity",
    "select_with_llm",
    "write_profiles",
]
