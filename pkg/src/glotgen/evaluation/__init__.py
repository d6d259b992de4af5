"""Multilingual evaluation: oracle detection, compositional scoring, CLC/CSS."""

from .compositional import (DIMENSIONS, CompositionalScore, PromptConstraint,
                            prompt_concepts, prompt_text, sample_constraint,
                            score_constraint, score_prompt)
from .consistency import (CLCReport, CodeSwitchPrompt, CSSReport, clc_score,
                          cosine, css_scores, distribution_summary,
                          make_code_switch_prompts)
from .detector import DetectedObject, classify_cells, detect_objects
from .embeddings import (BUILTIN_BACKENDS, DownsampleRawBackend,
                         ExternalFileBackend, HistogramMomentBackend,
                         builtin_embed, get_backend)
from .suite import (EvalConfig, EvalPrompt, build_prompt_set, load_prompt_set,
                    run_eval_suite, save_prompt_set)

__all__ = [
    "BUILTIN_BACKENDS", "DIMENSIONS",
    "CLCReport", "CSSReport", "CodeSwitchPrompt", "CompositionalScore",
    "DetectedObject", "DownsampleRawBackend", "EvalConfig", "EvalPrompt",
    "ExternalFileBackend", "HistogramMomentBackend", "PromptConstraint",
    "build_prompt_set", "builtin_embed", "classify_cells", "clc_score",
    "cosine", "css_scores", "detect_objects", "distribution_summary",
    "get_backend", "load_prompt_set", "make_code_switch_prompts",
    "prompt_concepts", "prompt_text", "run_eval_suite", "sample_constraint",
    "save_prompt_set", "score_constraint", "score_prompt",
]
