"""Run preparation, the prompt training loop and evaluation."""
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from dpc.config import RunConfig, worker_threads
from dpc.data.features import FeatureStore
from dpc.data.manifest import DatasetManifest, group_labels, load_manifest
from dpc.data.preprocess import PreprocessConfig
from dpc.data.split import train_test_parts
from dpc.data.synthetic import SyntheticSpec, make_synthetic, neutral_order, relabel
from dpc.errors import ContractViolation, NumericError
from dpc.graph.tape import GraphTape
from dpc.models import classifier
from dpc.models.model_interface import EncoderPair, load_encoders
from dpc.models.prompt_model import PromptModel
from dpc.prompting.prompts import AblationFlags
from dpc.prompting.vocab import Template, Vocabulary
from dpc.training.checkpoint import Checkpoint
from dpc.training.metrics import Metrics, compute_metrics
from dpc.training.optim import SGD, step_lr

logger = logging.getLogger(__name__)


@dataclass
class FeatureSplit:
    features: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)


@dataclass
class PreparedData:
    labels: List[str]
    train: FeatureSplit
    test: FeatureSplit
    certificate: Optional[float] = None


@dataclass
class RunContext:
    """Everything a run needs besides its configuration."""

    vocabulary: Vocabulary
    encoders: EncoderPair
    data: PreparedData


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    test_accuracy: float


@dataclass
class TrainResult:
    model: PromptModel
    optimizer: SGD
    checkpoint: Checkpoint
    history: List[EpochRecord] = field(default_factory=list)
    steps: int = 0

    @property
    def final_test_accuracy(self) -> float:
        return self.history[-1].test_accuracy if self.history else 0.0


def preprocess_config(config: RunConfig) -> PreprocessConfig:
    p = config.data.preprocess
    return PreprocessConfig(tuple(p.mean), tuple(p.std), config.preprocess_size)


def _labels_for(config: RunConfig, manifest: Optional[DatasetManifest]) -> List[str]:
    if manifest is not None:
        return manifest.labels
    s = config.data.synthetic
    return SyntheticSpec(classes=s.classes, per_class=s.per_class).label_names()


def build_vocabulary(config: RunConfig, labels: List[str]) -> Vocabulary:
    if config.paths.vocab:
        return Vocabulary.load(config.resolve_path(config.paths.vocab))
    templates = [config.prompt.template] + list(config.prompt.templates)
    return Vocabulary.build(templates + list(labels))


def prepare_run(config: RunConfig) -> RunContext:
    """Load or generate the dataset, the vocabulary and the frozen encoders, then encode every image."""
    threads = worker_threads()
    manifest = None
    if config.data.source == "manifest":
        manifest = load_manifest(config.resolve_path(config.paths.manifest))
    if manifest is not None and config.data.label_groups:
        manifest = group_labels(manifest, config.data.label_groups)

    if manifest is None and config.data.label_groups:
        vocab_labels = list(config.data.label_groups)
    else:
        vocab_labels = _labels_for(config, manifest)
    vocabulary = build_vocabulary(config, vocab_labels)
    encoders = load_encoders(
        config.image_encoder_config(),
        config.text_encoder_config(len(vocabulary)),
        config.seeds.weights,
        config.resolve_path(config.paths.encoder_archive),
    )

    preprocess = preprocess_config(config)
    if manifest is None:
        s = config.data.synthetic
        spec = SyntheticSpec(s.classes, s.per_class, s.image_size, config.seeds.data, s.noise, s.amplitude,
                             s.colour_radius)
        manifest = make_synthetic(spec, encoders.image, preprocess, threads=threads)
        if config.data.label_groups:
            manifest = group_labels(manifest, config.data.label_groups)

    store = FeatureStore(encoders.image, encoders.digest, preprocess, threads)
    if config.data.source == "synthetic" and config.data.synthetic.neutral_labels:
        manifest = _neutral_labels(config, vocabulary, encoders, manifest, store)
    train_part, test_part = train_test_parts(manifest, config.data.split, config.seeds.data)
    data = PreparedData(
        labels=list(manifest.labels),
        train=FeatureSplit(store(train_part), train_part.targets),
        test=FeatureSplit(store(test_part), test_part.targets),
        certificate=manifest.certificate,
    )
    return RunContext(vocabulary, encoders, data)


def _neutral_labels(config: RunConfig, vocabulary: Vocabulary, encoders: EncoderPair,
                    manifest: DatasetManifest, store: FeatureStore) -> DatasetManifest:
    """Name the synthetic classes so the untrained template prompt scores chance."""
    everything = FeatureSplit(store(manifest), manifest.targets)
    context = RunContext(vocabulary, encoders, PreparedData(list(manifest.labels), everything, everything))
    untrained = zero_shot(config, context, split=everything)
    order = neutral_order(untrained.confusion)
    relabeled = relabel(manifest, order)
    logger.info("synthetic label order %s: untrained accuracy %.4f -> %.4f", list(order), untrained.accuracy,
                np.trace(untrained.confusion[:, list(order)]) / max(untrained.total, 1))
    return relabeled


def build_model(config: RunConfig, context: RunContext, flags: Optional[AblationFlags] = None,
                template: Optional[str] = None) -> PromptModel:
    return PromptModel.build(
        context.encoders,
        context.vocabulary,
        context.data.labels,
        Template.parse(template or config.prompt.template, context.vocabulary),
        flags or config.prompt.flags,
        seed=config.seeds.weights,
        logit_scale=config.model.logit_scale,
        normalize_weights=config.prompt.normalize_weights,
    )


def predict_split(model: PromptModel, split: FeatureSplit, batch_size: int, threads: int = 1) -> np.ndarray:
    """Predictions in instance order; chunks are fixed by ``batch_size`` whatever the thread count."""
    starts = list(range(0, len(split), batch_size))
    if not starts:
        return np.zeros(0, dtype=np.int64)

    def run(start: int) -> np.ndarray:
        return model.predict(split.features[start:start + batch_size])

    if threads <= 1:
        chunks = [run(start) for start in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(run, starts))
    return np.concatenate(chunks)


def evaluate_model(model: PromptModel, split: FeatureSplit, batch_size: int = 64, threads: int = 1) -> Metrics:
    predictions = predict_split(model, split, batch_size, threads)
    return compute_metrics(split.targets, predictions, len(model.labels))


def _progress_disabled() -> bool:
    return not sys.stderr.isatty()


def train(config: RunConfig, context: RunContext, flags: Optional[AblationFlags] = None,
          template: Optional[str] = None, max_steps: Optional[int] = None) -> TrainResult:
    """Optimize the prompt bank; encoders stay frozen.

    Batch order comes from ``seeds.shuffle`` only, so equal configurations
    produce identical checkpoints.
    """
    data = context.data
    if len(data.train) == 0:
        raise ContractViolation("training split is empty")
    model = build_model(config, context, flags, template)
    schedule = config.optim.schedule
    optimizer = SGD(model.parameters(), lr=step_lr(0, schedule), momentum=config.optim.momentum)
    rng = np.random.default_rng(config.seeds.shuffle)
    batch_size = config.optim.batch_size
    threads = worker_threads()

    result = TrainResult(model, optimizer, checkpoint=None)
    for epoch in range(config.optim.epochs):
        optimizer.lr = step_lr(epoch, schedule)
        order = rng.permutation(len(data.train))
        loss_sum, correct = 0.0, 0
        batches = range(0, len(order), batch_size)
        for batch, start in enumerate(tqdm(batches, desc=f"Epoch {epoch + 1}/{config.optim.epochs}",
                                           disable=_progress_disabled(), leave=False)):
            index = order[start:start + batch_size]
            features, targets = data.train.features[index], data.train.targets[index]
            try:
                with GraphTape() as tape:
                    logits = model.logits(features)
                    loss = classifier.cross_entropy(logits, targets, model.logit_scale)
                tape.backward(loss, model.parameters())
            except NumericError as exc:
                raise NumericError(
                    f"epoch {epoch}, batch {batch}, instances {index.tolist()}: {exc}") from exc
            optimizer.step()
            loss_sum += loss.item() * len(index)
            correct += int(np.sum(classifier.predict(logits) == targets))
            result.steps += 1
            if max_steps is not None and result.steps >= max_steps:
                break

        test_metrics = evaluate_model(model, data.test, batch_size, threads)
        seen = min(len(order), (batch + 1) * batch_size)
        record = EpochRecord(epoch, optimizer.lr, loss_sum / seen, correct / seen, test_metrics.accuracy)
        result.history.append(record)
        logger.info("epoch %d lr %.4g loss %.4f train acc %.4f test acc %.4f",
                    epoch, record.lr, record.train_loss, record.train_accuracy, record.test_accuracy)
        if max_steps is not None and result.steps >= max_steps:
            break

    result.checkpoint = Checkpoint(
        config_digest=config.digest,
        encoder_digest=context.encoders.digest,
        epoch=len(result.history),
        prompt_bank=np.array(model.bank.values.data, dtype=np.float32),
        velocity=np.array(optimizer.state.velocity[model.bank.values.name], dtype=np.float32),
    )
    return result


def restore_model(config: RunConfig, context: RunContext, checkpoint: Checkpoint) -> PromptModel:
    checkpoint.check(config.digest, context.encoders.digest)
    model = build_model(config, context)
    if checkpoint.prompt_bank.shape != model.bank.values.shape:
        raise ContractViolation(
            f"checkpoint prompt bank {checkpoint.prompt_bank.shape} does not fit {model.bank.values.shape}")
    model.bank.values.data = checkpoint.prompt_bank.astype(model.bank.values.dtype)
    return model


def evaluate(checkpoint: Checkpoint, config: RunConfig, context: RunContext,
             split: Optional[FeatureSplit] = None) -> Metrics:
    """Metrics of a saved prompt; refuses checkpoints from another configuration or encoder."""
    model = restore_model(config, context, checkpoint)
    return evaluate_model(model, context.data.test if split is None else split, config.optim.batch_size, worker_threads())


def zero_shot(config: RunConfig, context: RunContext, split: Optional[FeatureSplit] = None) -> Metrics:
    """The untrained template prompt shared by every class."""
    model = build_model(config, context, flags=AblationFlags(False, False))
    return evaluate_model(model, context.data.test if split is None else split, config.optim.batch_size, worker_threads())
