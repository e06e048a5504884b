"""
    Pair scorers: callables turning a list of candidate pairs into one
    connection probability per pair.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy

from splitfix.connectnet.models import Mask_Classifier, Point_Classifier, embedding_distance_classifier, predict_connectivity
from splitfix.connectnet.samples import build_samples
from splitfix.connectnet.training import ClassifierConfig
from splitfix.embednet.model import EmbeddingField
from splitfix.registration import CandidatePair
from splitfix.volumes.types import LabeledVolume

Scorer = Callable[[Sequence[CandidatePair]], numpy.ndarray]


def pair_identity(seg_a: int, seg_b: int, truncation) -> tuple[int, int, tuple[float, ...]]:
    return int(seg_a), int(seg_b), tuple(round(float(value), 3) for value in truncation)


def constant_scorer(probability: float) -> Scorer:
    """ Scores every pair with the same probability. """

    def _score(pairs: Sequence[CandidatePair]) -> numpy.ndarray:
        return numpy.full(len(pairs), float(probability))

    return _score


def model_scorer(model: Point_Classifier | Mask_Classifier, volume: LabeledVolume, config: ClassifierConfig, field: EmbeddingField | None = None, workers: int = 1) -> Scorer:
    """
        Scores pairs with a trained classifier. Pairs whose sample cannot be
        built (a segment is missing from the crop) score 0.
    """

    def _score(pairs: Sequence[CandidatePair]) -> numpy.ndarray:
        samples = build_samples(
            volume,
            pairs,
            config.architecture,
            field,
            points=config.points,
            cube_nm=config.cube_nm,
            mask_side_nm=config.mask_side_nm,
            mask_dims=config.mask_dims,
            seed=config.seed,
            workers=workers
        )
        probabilities: numpy.ndarray = predict_connectivity(model, samples)
        scored: dict[tuple, float] = {
            pair_identity(sample.seg_a, sample.seg_b, sample.truncation): float(probability)
            for sample, probability in zip(samples, probabilities.tolist())
        }

        return numpy.array([scored.get(pair_identity(pair.seg_a, pair.seg_b, pair.truncation), 0.0) for pair in pairs])

    return _score


def embedding_distance_scorer(field: EmbeddingField, volume: LabeledVolume, cube_nm=(2560.0, 2560.0, 2560.0), delta_d: float = 1.5, workers: int = 1) -> Scorer:
    """
        Scores a pair 1 when the mean embeddings of its two segments inside
        the cube around the truncation point are closer than delta_d, else 0.
        Pairs with a segment missing from the cube score 0.
    """

    def _score_one(pair: CandidatePair) -> float:
        slices: tuple[slice, slice, slice] = volume.crop_slices(pair.truncation, cube_nm)
        labels: numpy.ndarray = volume.segment_ids[slices]
        query_mask: numpy.ndarray = labels == pair.seg_a
        candidate_mask: numpy.ndarray = labels == pair.seg_b
        if not query_mask.any() or not candidate_mask.any():
            return 0.0

        return float(embedding_distance_classifier(field.values[slices], query_mask, candidate_mask, delta_d))

    def _score(pairs: Sequence[CandidatePair]) -> numpy.ndarray:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            scores: list[float] = list(executor.map(_score_one, pairs))

        logging.info(f"Scored {len(pairs)} pairs by embedding distance (delta_d={delta_d}).")

        return numpy.array(scores, dtype=numpy.float64)

    return _score
