from dpc.prompting.prompts import (
    ABLATION_GRID,
    AblationFlags,
    ClassEmbeddings,
    PromptBank,
    ablation_prompt,
    assemble_full_prompt,
    compose_diversified,
    init_prompt_bank,
)
from dpc.prompting.vocab import TEMPLATE_PRESETS, Template, Vocabulary, tokenize

__all__ = [
    "ABLATION_GRID",
    "AblationFlags",
    "ClassEmbeddings",
    "PromptBank",
    "TEMPLATE_PRESETS",
    "Template",
    "Vocabulary",
    "ablation_prompt",
    "assemble_full_prompt",
    "compose_diversified",
    "init_prompt_bank",
    "tokenize",
]
