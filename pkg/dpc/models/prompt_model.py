"""The trainable prompt over a pair of frozen encoders."""
import logging
from typing import List, Sequence

import numpy as np

from dpc.graph.tensor import Parameter, Tensor
from dpc.models import classifier
from dpc.models.model_interface import EncoderPair
from dpc.prompting.prompts import (
    AblationFlags,
    ClassEmbeddings,
    PromptBank,
    ablation_prompt,
    init_prompt_bank,
)
from dpc.prompting.vocab import Template, Vocabulary

logger = logging.getLogger(__name__)


class PromptModel:
    """Prompt bank, class embeddings and scoring for one flag combination.

    The bank is the only trainable parameter; everything reachable through
    the encoders is frozen.
    """

    def __init__(
        self,
        encoders: EncoderPair,
        class_embeddings: ClassEmbeddings,
        bank: PromptBank,
        flags: AblationFlags,
        logit_scale: float = 1.0,
        normalize_weights: bool = False,
    ):
        self.encoders = encoders
        self.class_embeddings = class_embeddings
        self.bank = bank
        self.flags = flags
        self.logit_scale = logit_scale
        self.normalize_weights = normalize_weights

    @classmethod
    def build(
        cls,
        encoders: EncoderPair,
        vocabulary: Vocabulary,
        labels: Sequence[str],
        template: Template,
        flags: AblationFlags,
        seed: int = 0,
        logit_scale: float = 1.0,
        normalize_weights: bool = False,
    ) -> "PromptModel":
        class_embeddings = ClassEmbeddings.build(labels, vocabulary, encoders.text)
        bank = init_prompt_bank(
            template,
            encoders.text,
            flags.bank_slices(len(labels)),
            is_flag=flags.instance_specific,
            seed=seed,
            longest_class=class_embeddings.longest,
        )
        logger.debug("prompt bank %s for flags %s", bank.values.shape, flags.label)
        return cls(encoders, class_embeddings, bank, flags, logit_scale, normalize_weights)

    @property
    def labels(self) -> List[str]:
        return self.class_embeddings.labels

    def parameters(self) -> List[Parameter]:
        return [self.bank.values]

    def sequences(self, image_features) -> List[Tensor]:
        return ablation_prompt(
            self.flags,
            self.bank,
            image_features,
            self.class_embeddings,
            context_length=self.encoders.text.config.context_length,
            normalize=self.normalize_weights,
        )

    def logits(self, image_features) -> Tensor:
        return classifier.score(image_features, self.sequences(image_features), self.encoders.text)

    def loss(self, image_features, targets) -> Tensor:
        return classifier.cross_entropy(self.logits(image_features), targets, self.logit_scale)

    def predict(self, image_features) -> np.ndarray:
        return np.atleast_1d(classifier.predict(self.logits(image_features)))
