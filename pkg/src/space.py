"""Parameter spaces, design validation and encoding, and name masking.

A design is a plain mapping from parameter name to a real (numeric
parameters) or an option string (categorical parameters). Absent entries
are allowed everywhere and mean "not specified".
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

import config
from src.errors import (
    CardinalityOverflow,
    InvalidSpace,
    InvalidValue,
    UnknownOption,
    UnknownParameter,
)

logger = logging.getLogger(__name__)

Design = dict[str, float | str]

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ParameterSpec:
    """One parameter of a search space."""

    name: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    options: tuple[str, ...] = ()
    unit: str | None = None

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERIC

    @property
    def width(self) -> int:
        """Number of encoded columns this parameter occupies."""
        return 1 if self.is_numeric else len(self.options)

    def check(self) -> None:
        """Raise InvalidSpace if the kind-specific fields are inconsistent."""
        if self.kind == NUMERIC:
            if self.lower is None or self.upper is None:
                raise InvalidSpace(f"Numeric parameter {self.name!r} needs lower and upper")
            if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
                raise InvalidSpace(f"Numeric parameter {self.name!r} has non-finite bounds")
            if not self.lower < self.upper:
                raise InvalidSpace(
                    f"Numeric parameter {self.name!r} needs lower < upper, "
                    f"got [{self.lower}, {self.upper}]"
                )
            if self.options:
                raise InvalidSpace(f"Numeric parameter {self.name!r} cannot have options")
        elif self.kind == CATEGORICAL:
            if len(set(self.options)) != len(self.options):
                raise InvalidSpace(f"Categorical parameter {self.name!r} has duplicate options")
            if len(self.options) < 2:
                raise InvalidSpace(f"Categorical parameter {self.name!r} needs at least 2 options")
            if self.lower is not None or self.upper is not None:
                raise InvalidSpace(f"Categorical parameter {self.name!r} cannot have bounds")
        else:
            raise InvalidSpace(f"Parameter {self.name!r} has unknown kind {self.kind!r}")

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.is_numeric:
            data["lower"] = self.lower
            data["upper"] = self.upper
        else:
            data["options"] = list(self.options)
        if self.unit:
            data["unit"] = self.unit
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ParameterSpec":
        kind = data.get("kind")
        if kind == NUMERIC:
            try:
                lower = float(data["lower"])
                upper = float(data["upper"])
            except (KeyError, TypeError, ValueError) as e:
                raise InvalidSpace(f"Numeric parameter {data.get('name')!r}: bad bounds ({e})") from e
            spec = cls(name=str(data["name"]), kind=kind, lower=lower, upper=upper, unit=data.get("unit"))
        else:
            options = tuple(str(o) for o in data.get("options") or ())
            spec = cls(name=str(data.get("name")), kind=str(kind), options=options, unit=data.get("unit"))
        spec.check()
        return spec


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered collection of parameters; the search domain of a task."""

    params: tuple[ParameterSpec, ...]
    name: str = "space"

    def __post_init__(self) -> None:
        names = [p.name for p in self.params]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise InvalidSpace(f"Duplicate parameter names: {', '.join(duplicates)}")
        if not self.params:
            raise InvalidSpace("A parameter space needs at least one parameter")
        for spec in self.params:
            spec.check()

    def __iter__(self) -> Iterator[ParameterSpec]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def __contains__(self, name: object) -> bool:
        return any(p.name == name for p in self.params)

    def get(self, name: str) -> ParameterSpec:
        for spec in self.params:
            if spec.name == name:
                return spec
        raise UnknownParameter(f"Unknown parameter: {name!r}")

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def numeric(self) -> list[ParameterSpec]:
        return [p for p in self.params if p.is_numeric]

    @property
    def categorical(self) -> list[ParameterSpec]:
        return [p for p in self.params if not p.is_numeric]

    @property
    def dimension(self) -> int:
        """Length of an encoded design vector."""
        return sum(p.width for p in self.params)

    def offsets(self) -> list[tuple[ParameterSpec, int]]:
        """Each parameter with the index of its first encoded column."""
        result = []
        offset = 0
        for spec in self.params:
            result.append((spec, offset))
            offset += spec.width
        return result

    def feature_names(self) -> list[str]:
        names = []
        for spec in self.params:
            if spec.is_numeric:
                names.append(spec.name)
            else:
                names.extend(f"{spec.name}={option}" for option in spec.options)
        return names

    def sample_encoded(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n encoded designs uniformly at random.

        Numerics are uniform on [0, 1] (uniform in original range), categoricals
        uniform over options. Draws are taken parameter by parameter in
        declaration order.
        """
        out = np.zeros((n, self.dimension))
        for spec, offset in self.offsets():
            if spec.is_numeric:
                out[:, offset] = rng.random(n)
            else:
                picks = rng.integers(len(spec.options), size=n)
                out[np.arange(n), offset + picks] = 1.0
        return out

    def decode(self, vector: np.ndarray) -> Design:
        """Map an encoded vector back to a design (inverse of encode_design)."""
        design: Design = {}
        for spec, offset in self.offsets():
            if spec.is_numeric:
                u = float(vector[offset])
                design[spec.name] = spec.lower + u * (spec.upper - spec.lower)
            else:
                block = vector[offset:offset + spec.width]
                if np.any(block > 0):
                    design[spec.name] = spec.options[int(np.argmax(block))]
        return design

    def to_list(self) -> list[dict[str, Any]]:
        return [p.to_dict() for p in self.params]

    @classmethod
    def from_list(cls, items: list[dict[str, Any]], name: str = "space") -> "ParameterSpace":
        return cls(params=tuple(ParameterSpec.from_dict(item) for item in items), name=name)


@dataclass(frozen=True)
class ValidatedDesign:
    """A cleaned design plus the corrections applied while cleaning it."""

    values: Design
    corrections: tuple[str, ...] = ()


def is_missing(value: Any) -> bool:
    """True for None and float NaN."""
    if value is None:
        return True
    return isinstance(value, float) and math.isnan(value)


def validate_design(space: ParameterSpace, d: dict[str, Any]) -> ValidatedDesign:
    """Clean a raw design against a space.

    Numeric values are clipped to [lower, upper]; categorical values must
    match an option exactly after trimming surrounding whitespace.

    Raises:
        UnknownParameter: key not in the space
        UnknownOption: categorical value not among the options
        InvalidValue: value of the wrong type for its parameter
    """
    values: Design = {}
    corrections: list[str] = []

    for key, value in d.items():
        if key not in space:
            raise UnknownParameter(f"Unknown parameter: {key!r}")
        if is_missing(value):
            continue
        spec = space.get(key)

        if spec.is_numeric:
            if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
                raise InvalidValue(f"Parameter {key!r} expects a number, got {value!r}")
            x = float(value)
            if not math.isfinite(x):
                raise InvalidValue(f"Parameter {key!r} got non-finite value {value!r}")
            clipped = min(max(x, spec.lower), spec.upper)
            if clipped != x:
                corrections.append(f"{key}: {x!r} clipped to {clipped!r}")
            values[key] = clipped
        else:
            if not isinstance(value, str):
                raise InvalidValue(f"Parameter {key!r} expects an option string, got {value!r}")
            option = value.strip()
            if option not in spec.options:
                raise UnknownOption(
                    f"Parameter {key!r} has no option {value!r} "
                    f"(options: {', '.join(spec.options)})"
                )
            if option != value:
                corrections.append(f"{key}: whitespace trimmed from {value!r}")
            values[key] = option

    return ValidatedDesign(values=values, corrections=tuple(corrections))


def encode_design(
    space: ParameterSpace,
    d: Design,
    missing_fill: float | dict[str, float] = config.MISSING_NUMERIC_FILL,
) -> np.ndarray:
    """Encode a validated design as a vector.

    Numerics are min-max scaled to [0, 1]; categoricals become one-hot
    blocks in option order. Absent numerics take `missing_fill` (a scalar, or
    a per-parameter mapping of scaled fill values); absent categoricals become
    an all-zero block.
    """
    vector = np.zeros(space.dimension)
    for spec, offset in space.offsets():
        value = d.get(spec.name)
        if spec.is_numeric:
            if is_missing(value):
                if isinstance(missing_fill, dict):
                    vector[offset] = missing_fill.get(spec.name, config.MISSING_NUMERIC_FILL)
                else:
                    vector[offset] = missing_fill
            else:
                vector[offset] = (float(value) - spec.lower) / (spec.upper - spec.lower)
        elif not is_missing(value):
            vector[offset + spec.options.index(value)] = 1.0
    return vector


def encode_designs(
    space: ParameterSpace,
    designs: list[Design],
    missing_fill: float | dict[str, float] = config.MISSING_NUMERIC_FILL,
) -> np.ndarray:
    """Encode a list of designs into an (n, dimension) matrix."""
    if not designs:
        return np.zeros((0, space.dimension))
    return np.vstack([encode_design(space, d, missing_fill) for d in designs])


# =============================================================================
# MASKING
# =============================================================================

def option_labels(count: int) -> list[str]:
    """Masked option labels A, B, ..., Z, AA, AB, ..."""
    alphabet = config.OPTION_ALPHABET
    limit = len(alphabet) + len(alphabet) ** 2
    if count > limit:
        raise CardinalityOverflow(f"Cannot mask {count} options (limit {limit})")
    singles = list(alphabet)
    doubles = ["".join(pair) for pair in itertools.product(alphabet, repeat=2)]
    return (singles + doubles)[:count]


@dataclass(frozen=True)
class NameMap:
    """Invertible renaming between an original space and its masked twin."""

    params: dict[str, str] = field(default_factory=dict)
    options: dict[str, dict[str, str]] = field(default_factory=dict)

    def _inverse(self) -> tuple[dict[str, str], dict[str, dict[str, str]]]:
        params = {masked: original for original, masked in self.params.items()}
        options = {
            self.params[original]: {m: o for o, m in mapping.items()}
            for original, mapping in self.options.items()
        }
        return params, options

    def mask_design(self, d: Design) -> Design:
        """Rename a design from original to masked names."""
        masked: Design = {}
        for key, value in d.items():
            if key not in self.params:
                raise UnknownParameter(f"Unknown parameter: {key!r}")
            if key in self.options and not is_missing(value):
                mapping = self.options[key]
                if value not in mapping:
                    raise UnknownOption(f"Parameter {key!r} has no option {value!r}")
                masked[self.params[key]] = mapping[value]
            else:
                masked[self.params[key]] = value
        return masked

    def unmask_design(self, d: dict[str, Any]) -> dict[str, Any]:
        """Rename a design from masked back to original names."""
        params, options = self._inverse()
        original: dict[str, Any] = {}
        for key, value in d.items():
            if key not in params:
                raise UnknownParameter(f"Unknown parameter: {key!r}")
            if key in options and isinstance(value, str):
                label = value.strip()
                if label not in options[key]:
                    raise UnknownOption(f"Parameter {key!r} has no option {value!r}")
                original[params[key]] = options[key][label]
            else:
                original[params[key]] = value
        return original


def mask_space(space: ParameterSpace) -> tuple[ParameterSpace, NameMap]:
    """Strip semantic names from a space while preserving its geometry.

    Numerics become X1, X2, ... and categoricals C1, C2, ... in declaration
    order; options become A, B, C, ... in original order; units are dropped.
    """
    masked_params = []
    param_map: dict[str, str] = {}
    option_map: dict[str, dict[str, str]] = {}
    n_numeric = 0
    n_categorical = 0

    for spec in space:
        if spec.is_numeric:
            n_numeric += 1
            new_name = f"X{n_numeric}"
            masked_params.append(
                ParameterSpec(name=new_name, kind=NUMERIC, lower=spec.lower, upper=spec.upper)
            )
        else:
            n_categorical += 1
            new_name = f"C{n_categorical}"
            labels = option_labels(len(spec.options))
            option_map[spec.name] = dict(zip(spec.options, labels))
            masked_params.append(
                ParameterSpec(name=new_name, kind=CATEGORICAL, options=tuple(labels))
            )
        param_map[spec.name] = new_name

    masked = ParameterSpace(params=tuple(masked_params), name=f"{space.name}-masked")
    return masked, NameMap(params=param_map, options=option_map)
