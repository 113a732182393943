"""Leave-one-class-out zero-shot evaluation with retraining per fold."""
from __future__ import annotations

import logging

import numpy as np

from ..embedding import classify
from ..errors import ClassNotInRegistry, InsufficientData
from .folds import make_folds
from .metrics import ClassificationReport, classification_metrics
from .zeroshot import eval_clips, video_embeddings

log = logging.getLogger(__name__)


def loco_eval(init_state, train_manifest, test_manifest, registry_text_builder, train_config,
              tokenizer, mode: str = "temporal") -> tuple[ClassificationReport, list]:
    """Hold out each class in turn: train without its captions, test on its samples.

    ``registry_text_builder(state)`` returns the class-embedding registry for a
    trained state; every fold scores against all classes. Predictions from all
    folds are pooled into one report.
    """
    from ..trainer import train

    folds = make_folds(train_manifest, "leave_one_class_out")
    if folds.n_folds < 2:
        raise InsufficientData("leave-one-class-out needs at least two classes")
    labels, probs, names, fold_log = [], [], None, []
    for fold, held in enumerate(folds.keys):
        train_set = train_manifest.select_ids(folds.train_ids(fold))
        test_set = test_manifest.where(label=held)
        if len(test_set) == 0:
            log.warning("class %s has no test samples; fold skipped", held)
            continue
        result = train(init_state, train_set, train_config, tokenizer)
        registry = registry_text_builder(result.state)
        names = registry.names
        if held not in names:
            raise ClassNotInRegistry(f"held-out class {held!r} is not in the registry")
        clips = eval_clips(test_set, train_config.max_clip_len, train_config.temporal_downsample)
        z = video_embeddings(result.state, clips, mode)
        probs.append(classify(z, registry.embeddings, result.state.temperature))
        labels += [names.index(held)] * len(test_set)
        fold_log.append((held, len(train_set), len(test_set), result.final_loss))
    if not probs:
        raise InsufficientData("no fold had test samples")
    report = classification_metrics(np.asarray(labels), np.vstack(probs), names,
                                    fold_plan=f"leave_one_class_out ({len(fold_log)} folds)")
    return report, fold_log
