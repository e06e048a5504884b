"""
    Run configuration of the splitfix pipeline: an INI file with one section
    per stage, cast & validated against a declared schema, with overrides,
    a provenance digest & builders for every stage's configuration object.
"""

import configparser
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.validators import MaxValueValidator, MinValueValidator, RegexValidator
from environ import Env

from core.utils import config_hash, derive_seed
from splitfix.connectnet.models import MaskModelConfig, PointModelConfig
from splitfix.connectnet.samples import FEATURE_SOURCES
from splitfix.connectnet.training import ARCHITECTURES, ClassifierConfig
from splitfix.embednet.losses import LAMBDA3_MODES, Lambda3Schedule
from splitfix.embednet.samples import Augmentations
from splitfix.embednet.training import EmbedTrainConfig
from splitfix.exceptions import RunConfigError
from splitfix.numerics.optimizers import LearningRateSchedule
from splitfix.registration import RegistrationConfig
from splitfix.validators import ChoiceValidator, OpenIntervalValidator, OrderedPairValidator, VectorValidator
from splitfix.volumes.types import Artifact, SynthConfig

EVAL_CLASSIFIERS: tuple[str, str, str] = ("model", "constant", "embedding_distance")
EVAL_CANDIDATES: tuple[str, str] = ("registration", "endpoints")
HASH_EXCLUDED: frozenset[tuple[str, str]] = frozenset({("paths", "out_dir")})


@dataclass(frozen=True)
class Setting:
    """
        One configuration key: the cast handed to environ.Env.parse_value,
        validators run on the cast value & validators run on every item of a
        list value.
    """

    cast: object
    validators: tuple[Callable, ...] = ()
    item_validators: tuple[Callable, ...] = ()


_NON_NEGATIVE = MinValueValidator(0)
_POSITIVE = OpenIntervalValidator(lower=0)
_UNIT_INTERVAL = OpenIntervalValidator(lower=0, upper=1)
_PROBABILITY: tuple[Callable, ...] = (MinValueValidator(0), MaxValueValidator(1))
_POSITIVE_VECTOR_3 = VectorValidator(length=3)

SCHEMA: dict[str, dict[str, Setting]] = {
    "run": {
        "seed": Setting(int, (_NON_NEGATIVE,))
    },
    "paths": {
        key: Setting(str)
        for key in (
            "out_dir", "volume_dir", "skeleton_dir", "pairs", "embed_checkpoint", "embed_log",
            "classifier_checkpoint", "classifier_log", "sample_cache", "eval_dir", "trace_dir", "gradcheck_report"
        )
    },
    "synth": {
        "dims": Setting([int], (_POSITIVE_VECTOR_3,)),
        "voxel_size": Setting([float], (_POSITIVE_VECTOR_3,)),
        "neuron_count": Setting(int, (_NON_NEGATIVE,)),
        "stiffness": Setting(float, (_NON_NEGATIVE, OpenIntervalValidator(upper=1))),
        "radius_range_nm": Setting([float], (VectorValidator(length=2), OrderedPairValidator())),
        "cut_rate_per_um": Setting(float, (_NON_NEGATIVE,)),
        "min_cut_spacing_nm": Setting(float, (_NON_NEGATIVE,)),
        "node_spacing_nm": Setting(float, (_POSITIVE,)),
        "noise_sigma": Setting(float, (_NON_NEGATIVE,)),
        "neuron_intensity_jitter": Setting(float, (_NON_NEGATIVE,)),
        "missing_sections": Setting([int], (VectorValidator(minimum=0, allow_equal=True),)),
        "misalignments": Setting([str], item_validators=(RegexValidator(r"^\d+:-?\d+(?:\.\d+)?:-?\d+(?:\.\d+)?$", "Misalignments must be written z:dx:dy."),))
    },
    "registration": {
        "search_radius_voxels": Setting(int, (_NON_NEGATIVE,)),
        "include_slice_centroids": Setting(bool),
        "chamfer_densify_nm": Setting(float, (_NON_NEGATIVE,)),
        "shift_sigma_nm": Setting(float, (_NON_NEGATIVE,)),
        "cube_nm": Setting([float], (_POSITIVE_VECTOR_3,)),
        "negatives_per_positive": Setting(int, (_NON_NEGATIVE,)),
        "block_size_nm": Setting([float], (_POSITIVE_VECTOR_3,)),
        "min_pairs": Setting(int, (_NON_NEGATIVE,)),
        "train_fraction": Setting(float, (_UNIT_INTERVAL,))
    },
    "embed": {
        "crop_size": Setting([int], (_POSITIVE_VECTOR_3,)),
        "channels": Setting([int], (_POSITIVE_VECTOR_3,)),
        "k": Setting(int, (MinValueValidator(1),)),
        "lambda_merge": Setting(float, (_NON_NEGATIVE,)),
        "lambda_split": Setting(float, (_NON_NEGATIVE,)),
        "lambda3_mode": Setting(str, (ChoiceValidator(LAMBDA3_MODES),)),
        "lambda3_start": Setting(float, (_NON_NEGATIVE,)),
        "lambda3_end": Setting(float, (_NON_NEGATIVE,)),
        "lambda3_fixed": Setting(float, (_NON_NEGATIVE,)),
        "delta_d": Setting(float, (_POSITIVE,)),
        "delta_v": Setting(float, (_NON_NEGATIVE,)),
        "gamma": Setting(float, (_NON_NEGATIVE,)),
        "negatives": Setting(int, (_NON_NEGATIVE,)),
        "batch_size": Setting(int, (MinValueValidator(1),)),
        "learning_rate": Setting(float, (_POSITIVE,)),
        "warmup_steps": Setting(int, (_NON_NEGATIVE,)),
        "decay_every": Setting(int, (_NON_NEGATIVE,)),
        "decay_factor": Setting(float, (_POSITIVE,)),
        "weight_decay": Setting(float, (_NON_NEGATIVE,)),
        "steps": Setting(int, (_NON_NEGATIVE,)),
        "augment_rotate": Setting(bool),
        "augment_flip": Setting(bool),
        "augment_rescale": Setting(bool),
        "augment_intensity": Setting(bool),
        "hard_block_fraction": Setting(float, _PROBABILITY),
        "fine_tune_steps": Setting(int, (_NON_NEGATIVE,)),
        "prefetch": Setting(int, (MinValueValidator(1),))
    },
    "classifier": {
        "architecture": Setting(str, (ChoiceValidator(ARCHITECTURES),)),
        "feature_source": Setting(str, (ChoiceValidator(FEATURE_SOURCES),)),
        "points": Setting(int, (MinValueValidator(1),)),
        "mask_side_nm": Setting(float, (_POSITIVE,)),
        "mask_dims": Setting([int], (_POSITIVE_VECTOR_3,)),
        "positive_fraction": Setting(float, (_UNIT_INTERVAL,)),
        "batch_size": Setting(int, (MinValueValidator(1),)),
        "steps": Setting(int, (_NON_NEGATIVE,)),
        "learning_rate": Setting(float, (_POSITIVE,)),
        "warmup_steps": Setting(int, (_NON_NEGATIVE,)),
        "decay_every": Setting(int, (_NON_NEGATIVE,)),
        "decay_factor": Setting(float, (_POSITIVE,)),
        "weight_decay": Setting(float, (_NON_NEGATIVE,)),
        "centroids": Setting([int], (VectorValidator(length=2),)),
        "neighbours": Setting([int], (VectorValidator(length=2),)),
        "mask_filters": Setting([int], (_POSITIVE_VECTOR_3,))
    },
    "eval": {
        "classifier": Setting(str, (ChoiceValidator(EVAL_CLASSIFIERS),)),
        "constant_probability": Setting(float, _PROBABILITY),
        "merge_threshold": Setting(float, _PROBABILITY),
        "candidates": Setting(str, (ChoiceValidator(EVAL_CANDIDATES),)),
        "endpoint_max_distance_nm": Setting(float, (_POSITIVE,)),
        "endpoint_tail_nm": Setting(float, (_POSITIVE,)),
        "plot": Setting(bool)
    }
}


def parse_setting(section: str, key: str, raw: str):
    """ Casts & validates one raw value, raising RunConfigError naming the key. """

    name = f"{section}.{key}"
    if section not in SCHEMA:
        raise RunConfigError(f"Unknown configuration section {section!r}.", key=name)
    if key not in SCHEMA[section]:
        raise RunConfigError("Unknown configuration key.", key=name)

    setting: Setting = SCHEMA[section][key]
    try:
        value = Env.parse_value(raw.strip(), setting.cast)
    except (TypeError, ValueError) as e:
        raise RunConfigError(f"Value {raw!r} could not be read: {e}", key=name) from e

    if isinstance(value, list):
        value = tuple(item.strip() if isinstance(item, str) else item for item in value)

    try:
        validator: Callable
        for validator in setting.validators:
            validator(value)

        for validator in setting.item_validators:
            item: object
            for item in value:
                validator(item)
    except ValidationError as e:
        raise RunConfigError(f"Value {raw!r} is invalid: {' '.join(e.messages)}", key=name) from e

    return value


def _read_ini(path: Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with Path(path).open("r", encoding="utf-8") as file:
            parser.read_file(file)
    except OSError as e:
        raise RunConfigError(f"Configuration file {path} could not be read: {e}") from e
    except configparser.Error as e:
        raise RunConfigError(f"Configuration file {path} is malformed: {e}") from e

    return {section: dict(parser.items(section)) for section in parser.sections()}


def parse_override(override: str) -> tuple[str, str, str]:
    """ Splits a "section.key=value" override. """

    name, separator, raw = override.partition("=")
    section, dot, key = name.strip().partition(".")
    if not separator or not dot or not section or not key:
        raise RunConfigError(f"Override {override!r} must be written section.key=value.", key=name.strip() or None)

    return section, key.lower(), raw


class RunConfig:
    """
        Resolved run configuration. Values of the shipped default file are
        overlaid by the given configuration file, then by overrides; every
        schema key must end up set.
    """

    def __init__(self, values: dict[str, dict[str, object]], base_dir: Path | None = None, deterministic: bool = False) -> None:
        missing: list[str] = [f"{section}.{key}" for section, keys in SCHEMA.items() for key in keys if key not in values.get(section, {})]
        if missing:
            raise RunConfigError(f"Configuration keys are missing: {', '.join(missing)}.", key=missing[0])

        self.values: dict[str, dict[str, object]] = values
        self.base_dir: Path = Path.cwd() if base_dir is None else Path(base_dir)
        self.deterministic = deterministic

    @classmethod
    def load(cls, path: Path | None = None, overrides: Iterable[str] = (), seed: int | None = None, out_dir: Path | None = None, deterministic: bool = False) -> "RunConfig":
        raw: dict[str, dict[str, str]] = _read_ini(settings.SPLITFIX_DEFAULT_CONFIG)
        sources: list[dict[str, dict[str, str]]] = [_read_ini(path)] if path is not None else []

        layered: list[tuple[str, str, str]] = [
            (section, key, value)
            for source in sources
            for section, entries in source.items()
            for key, value in entries.items()
        ]
        layered += [parse_override(override) for override in overrides]
        if seed is not None:
            layered.append(("run", "seed", str(seed)))
        if out_dir is not None:
            layered.append(("paths", "out_dir", str(out_dir)))

        section: str
        key: str
        value: str
        for section, key, value in layered:
            raw.setdefault(section, {})[key] = value

        values: dict[str, dict[str, object]] = {
            section: {key: parse_setting(section, key, value) for key, value in entries.items()}
            for section, entries in raw.items()
        }

        config = cls(values, deterministic=deterministic)
        logging.info(f"Loaded run configuration {config.digest[:12]} (seed {config.seed}).")

        return config

    def get(self, section: str, key: str):
        try:
            return self.values[section][key]
        except KeyError as e:
            raise RunConfigError("Unknown configuration key.", key=f"{section}.{key}") from e

    @property
    def seed(self) -> int:
        return self.get("run", "seed")

    @property
    def digest(self) -> str:
        """ SHA-256 of the resolved values, leaving out the output directory. """

        hashed: dict[str, dict[str, object]] = {
            section: {key: value for key, value in entries.items() if (section, key) not in HASH_EXCLUDED}
            for section, entries in self.values.items()
        }

        return config_hash(hashed)

    @property
    def workers(self) -> int:
        return 1 if self.deterministic else settings.SPLITFIX_WORKERS

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)

    @property
    def out_dir(self) -> Path:
        out_dir = Path(self.get("paths", "out_dir"))
        return out_dir if out_dir.is_absolute() else self.base_dir / out_dir

    def path(self, key: str) -> Path:
        """ Returns a [paths] entry, resolved against out_dir when relative. """

        if key == "out_dir":
            return self.out_dir

        path = Path(self.get("paths", key))
        return path if path.is_absolute() else self.out_dir / path

    def artifacts(self) -> tuple[Artifact, ...]:
        artifacts: list[Artifact] = [Artifact("missing_section", int(z_index)) for z_index in self.get("synth", "missing_sections")]

        entry: str
        for entry in self.get("synth", "misalignments"):
            z_index, shift_x, shift_y = entry.split(":")
            artifacts.append(Artifact("misalignment", int(z_index), (float(shift_x), float(shift_y), 0.0)))

        return tuple(sorted(artifacts, key=lambda artifact: (artifact.z_index, artifact.kind)))

    def _build(self, section: str, builder: Callable):
        try:
            return builder()
        except ValueError as e:
            raise RunConfigError(f"Invalid [{section}] settings: {e}", key=section) from e

    def synth_config(self) -> SynthConfig:
        synth: dict[str, object] = self.values["synth"]

        return self._build("synth", lambda: SynthConfig(
            dims=synth["dims"],
            voxel_size=synth["voxel_size"],
            neuron_count=synth["neuron_count"],
            stiffness=synth["stiffness"],
            radius_range_nm=synth["radius_range_nm"],
            cut_rate_per_um=synth["cut_rate_per_um"],
            min_cut_spacing_nm=synth["min_cut_spacing_nm"],
            node_spacing_nm=synth["node_spacing_nm"],
            noise_sigma=synth["noise_sigma"],
            neuron_intensity_jitter=synth["neuron_intensity_jitter"],
            artifacts=self.artifacts(),
            seed=self.stage_seed("synth")
        ))

    def registration_config(self) -> RegistrationConfig:
        registration: dict[str, object] = self.values["registration"]

        return self._build("registration", lambda: RegistrationConfig(**registration))

    def embed_config(self) -> EmbedTrainConfig:
        embed: dict[str, object] = self.values["embed"]

        return self._build("embed", lambda: EmbedTrainConfig(
            crop_size=embed["crop_size"],
            channels=embed["channels"],
            k=embed["k"],
            lambda_merge=embed["lambda_merge"],
            lambda_split=embed["lambda_split"],
            lambda3=Lambda3Schedule(
                mode=embed["lambda3_mode"],
                start=embed["lambda3_start"],
                end=embed["lambda3_end"],
                total_steps=embed["steps"],
                fixed_value=embed["lambda3_fixed"]
            ),
            delta_d=embed["delta_d"],
            delta_v=embed["delta_v"],
            gamma=embed["gamma"],
            negatives=embed["negatives"],
            batch_size=embed["batch_size"],
            learning_rate=LearningRateSchedule(embed["learning_rate"], embed["warmup_steps"], embed["decay_every"], embed["decay_factor"]),
            weight_decay=embed["weight_decay"],
            steps=embed["steps"],
            augmentations=Augmentations(
                rotate=embed["augment_rotate"],
                flip=embed["augment_flip"],
                rescale=embed["augment_rescale"],
                intensity=embed["augment_intensity"]
            ),
            hard_block_fraction=embed["hard_block_fraction"],
            fine_tune_steps=embed["fine_tune_steps"],
            prefetch=embed["prefetch"],
            seed=self.stage_seed("train_embed")
        ))

    def classifier_config(self) -> ClassifierConfig:
        classifier: dict[str, object] = self.values["classifier"]

        return self._build("classifier", lambda: ClassifierConfig(
            architecture=classifier["architecture"],
            feature_source=classifier["feature_source"],
            points=classifier["points"],
            cube_nm=self.get("registration", "cube_nm"),
            mask_side_nm=classifier["mask_side_nm"],
            mask_dims=classifier["mask_dims"],
            positive_fraction=classifier["positive_fraction"],
            batch_size=classifier["batch_size"],
            steps=classifier["steps"],
            learning_rate=LearningRateSchedule(classifier["learning_rate"], classifier["warmup_steps"], classifier["decay_every"], classifier["decay_factor"]),
            weight_decay=classifier["weight_decay"],
            point_model=PointModelConfig(centroids=classifier["centroids"], neighbours=classifier["neighbours"]),
            mask_model=MaskModelConfig(filters=classifier["mask_filters"]),
            seed=self.stage_seed("train_classifier")
        ))
