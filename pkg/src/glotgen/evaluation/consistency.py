"""Cross-lingual consistency (CLC), code-switching similarity (CSS), and
code-switched prompt construction.

CLC treats the English generations of a prompt as the reference set and
averages cosine similarity against every generation from the other
languages. CSS probes half-translated prompts: English-first (EF) keeps the
first half of the token sequence in English, English-second (ES) the second
half; each variant's image is compared against the all-English reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..scene.lexicon import Lexicon


class ConsistencyError(ValueError):
    pass


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def clc_score(reference_embs, target_embs) -> float:
    """Mean cosine over the full reference x target grid."""
    refs = [np.asarray(e, dtype=np.float64) for e in reference_embs]
    targets = [np.asarray(e, dtype=np.float64) for e in target_embs]
    if not refs or not targets:
        raise ConsistencyError("CLC needs nonempty reference and target sets")
    total = 0.0
    for r in refs:
        for t in targets:
            total += cosine(r, t)
    return total / (len(refs) * len(targets))


def css_scores(ref_emb, ef_embs, es_embs) -> tuple[float, float]:
    """(CSS_EF, CSS_ES): mean cosine of each variant family vs the reference."""
    ref = np.asarray(ref_emb, dtype=np.float64)
    efs = [np.asarray(e, dtype=np.float64) for e in ef_embs]
    ess = [np.asarray(e, dtype=np.float64) for e in es_embs]
    if not efs or not ess:
        raise ConsistencyError("CSS needs nonempty EF and ES variant sets")
    ef = sum(cosine(ref, e) for e in efs) / len(efs)
    es = sum(cosine(ref, e) for e in ess) / len(ess)
    return ef, es


@dataclass(frozen=True)
class CodeSwitchPrompt:
    base_prompt: str
    variant: str                   # "EF" or "ES"
    target_language: str
    mixed_text: str


def make_code_switch_prompts(prompt_en: str, languages, lexicons: dict[str, Lexicon],
                             ) -> list[CodeSwitchPrompt]:
    """EF and ES variants of an English prompt for every non-English language.

    The token sequence splits at ceil(n/2); the designated half is replaced
    concept-by-concept with target-language surface forms. Mixed text joins
    with single spaces so tokenization stays lossless.
    """
    en = lexicons["en"]
    tokens = prompt_en.split()
    if not tokens:
        raise ConsistencyError("empty prompt")
    concepts = []
    for tok in tokens:
        concept = en.concept(tok)
        if concept is None:
            raise ConsistencyError(f"untranslatable token {tok!r}")
        concepts.append(concept)
    split = math.ceil(len(tokens) / 2)

    out: list[CodeSwitchPrompt] = []
    for lang in languages:
        if lang == "en":
            continue
        lex = lexicons[lang]
        translated = [lex.surface(c) for c in concepts]
        ef = tokens[:split] + translated[split:]
        es = translated[:split] + tokens[split:]
        out.append(CodeSwitchPrompt(prompt_en, "EF", lang, " ".join(ef)))
        out.append(CodeSwitchPrompt(prompt_en, "ES", lang, " ".join(es)))
    return out


@dataclass
class CLCReport:
    backend: str
    n_languages: int
    images_per_language: int
    per_prompt: dict[str, float] = field(default_factory=dict)

    @property
    def overall(self) -> float:
        return float(np.mean(list(self.per_prompt.values())))

    @property
    def n_prompts(self) -> int:
        return len(self.per_prompt)

    def to_dict(self) -> dict:
        return {"backend": self.backend, "overall": self.overall,
                "P": self.n_prompts, "L": self.n_languages,
                "K": self.images_per_language,
                "per_prompt": dict(sorted(self.per_prompt.items())),
                "distribution": distribution_summary(list(self.per_prompt.values()))}


@dataclass
class CSSReport:
    backend: str
    per_prompt_ef: dict[str, float] = field(default_factory=dict)
    per_prompt_es: dict[str, float] = field(default_factory=dict)

    @property
    def overall_ef(self) -> float:
        return float(np.mean(list(self.per_prompt_ef.values())))

    @property
    def overall_es(self) -> float:
        return float(np.mean(list(self.per_prompt_es.values())))

    def to_dict(self) -> dict:
        return {"backend": self.backend,
                "css_ef": self.overall_ef, "css_es": self.overall_es,
                "per_prompt_ef": dict(sorted(self.per_prompt_ef.items())),
                "per_prompt_es": dict(sorted(self.per_prompt_es.items())),
                "distribution_ef": distribution_summary(list(self.per_prompt_ef.values())),
                "distribution_es": distribution_summary(list(self.per_prompt_es.values()))}


def distribution_summary(values: list[float]) -> dict[str, float]:
    """Box-plot statistics, recomputable exactly from per-prompt records."""
    if not values:
        return {}
    arr = np.asarray(sorted(values), dtype=np.float64)
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return {"min": float(arr[0]), "q1": float(q1), "median": float(med),
            "q3": float(q3), "max": float(arr[-1]), "mean": float(arr.mean())}
