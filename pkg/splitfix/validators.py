"""
    Validators in splitfix app, used to check run configuration values.
"""

from typing import Collection

from django.core.exceptions import ValidationError
from django.utils import deconstruct

deconstructible = deconstruct.deconstructible


@deconstructible
class ChoiceValidator:
    """ Validator which only allows one of a fixed set of values. """

    def __init__(self, choices: Collection[str]) -> None:
        self.choices: tuple[str, ...] = tuple(choices)

    def __call__(self, value: str) -> None:
        if value not in self.choices:
            raise ValidationError(f"{value!r} is not one of {self.choices}.", code="invalid")

    def __eq__(self, other) -> bool:
        return self.choices == other.choices


@deconstructible
class OpenIntervalValidator:
    """
        Validator which only allows numbers strictly between a lower & upper
        bound. Either bound can be None to leave that side unbounded.
    """

    def __init__(self, lower: float | None = None, upper: float | None = None) -> None:
        self.lower = lower
        self.upper = upper

    def __call__(self, value: float) -> None:
        if self.lower is not None and not value > self.lower:
            raise ValidationError(f"{value} must be greater than {self.lower}.", code="invalid")
        if self.upper is not None and not value < self.upper:
            raise ValidationError(f"{value} must be less than {self.upper}.", code="invalid")

    def __eq__(self, other) -> bool:
        return self.lower == other.lower and self.upper == other.upper


@deconstructible
class VectorValidator:
    """
        Validator for comma separated numeric vectors, checking their length &
        that every component is greater than (or at least) a minimum value.
    """

    def __init__(self, length: int | None = None, minimum: float = 0, allow_equal: bool = False) -> None:
        self.length = length
        self.minimum = minimum
        self.allow_equal = allow_equal

    def __call__(self, value: tuple) -> None:
        if self.length is not None and len(value) != self.length:
            raise ValidationError(f"Expected {self.length} components but found {len(value)}.", code="invalid")

        component: float
        for component in value:
            if component < self.minimum or (component == self.minimum and not self.allow_equal):
                raise ValidationError(f"Every component must be {'at least' if self.allow_equal else 'greater than'} {self.minimum}.", code="invalid")

    def __eq__(self, other) -> bool:
        return (self.length, self.minimum, self.allow_equal) == (other.length, other.minimum, other.allow_equal)


@deconstructible
class OrderedPairValidator:
    """ Validator for two-component vectors whose first component is <= the second. """

    def __init__(self, descending: bool = False) -> None:
        self.descending = descending

    def __call__(self, value: tuple) -> None:
        if len(value) != 2:
            raise ValidationError("Expected exactly 2 components.", code="invalid")

        first, second = value
        if (first < second) if self.descending else (first > second):
            raise ValidationError(f"Components must be in {'descending' if self.descending else 'ascending'} order.", code="invalid")

    def __eq__(self, other) -> bool:
        return self.descending == other.descending
