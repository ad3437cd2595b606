"""Tests for parameter spaces, design validation, encoding and masking."""

import numpy as np
import pytest

from src.errors import CardinalityOverflow, InvalidSpace, InvalidValue, UnknownOption, UnknownParameter
from src.space import (
    ParameterSpace,
    ParameterSpec,
    encode_design,
    mask_space,
    option_labels,
    validate_design,
)


class TestParameterSpace:
    def test_duplicate_names_rejected(self):
        with pytest.raises(InvalidSpace):
            ParameterSpace(params=(
                ParameterSpec(name="a", kind="numeric", lower=0, upper=1),
                ParameterSpec(name="a", kind="numeric", lower=0, upper=2),
            ))

    def test_bounds_must_be_ordered(self):
        with pytest.raises(InvalidSpace):
            ParameterSpace(params=(ParameterSpec(name="a", kind="numeric", lower=1.0, upper=1.0),))

    def test_categorical_needs_two_distinct_options(self):
        with pytest.raises(InvalidSpace):
            ParameterSpace(params=(ParameterSpec(name="c", kind="categorical", options=("x",)),))
        with pytest.raises(InvalidSpace):
            ParameterSpace(params=(ParameterSpec(name="c", kind="categorical", options=("x", "x")),))

    def test_dimension_and_feature_names(self, mixed_space):
        assert mixed_space.dimension == 5
        assert mixed_space.feature_names() == [
            "temperature", "solvent=water", "solvent=ethanol", "solvent=dmso", "time",
        ]

    def test_from_list_round_trips_to_list(self, mixed_space):
        rebuilt = ParameterSpace.from_list(mixed_space.to_list(), name="mixed")
        assert rebuilt == mixed_space


class TestValidateDesign:
    def test_clean_design_passes_unchanged(self, mixed_space):
        result = validate_design(mixed_space, {"temperature": 40, "solvent": "dmso", "time": 2.5})
        assert result.values == {"temperature": 40.0, "solvent": "dmso", "time": 2.5}
        assert result.corrections == ()

    def test_out_of_range_numeric_is_clipped(self, mixed_space):
        result = validate_design(mixed_space, {"temperature": 95.0, "time": -1})
        assert result.values["temperature"] == 80.0
        assert result.values["time"] == 0.0
        assert len(result.corrections) == 2
        assert "clipped" in result.corrections[0]

    def test_whitespace_around_option_is_trimmed(self, mixed_space):
        result = validate_design(mixed_space, {"solvent": " ethanol "})
        assert result.values == {"solvent": "ethanol"}
        assert result.corrections

    def test_missing_values_are_skipped(self, mixed_space):
        result = validate_design(mixed_space, {"temperature": None, "time": float("nan")})
        assert result.values == {}

    def test_unknown_parameter(self, mixed_space):
        with pytest.raises(UnknownParameter):
            validate_design(mixed_space, {"pressure": 1.0})

    def test_unknown_option(self, mixed_space):
        with pytest.raises(UnknownOption):
            validate_design(mixed_space, {"solvent": "acetone"})

    def test_option_match_is_case_sensitive(self, mixed_space):
        with pytest.raises(UnknownOption):
            validate_design(mixed_space, {"solvent": "Water"})

    @pytest.mark.parametrize("value", ["40", True, float("inf")])
    def test_bad_numeric_values(self, mixed_space, value):
        with pytest.raises(InvalidValue):
            validate_design(mixed_space, {"temperature": value})

    def test_non_string_option(self, mixed_space):
        with pytest.raises(InvalidValue):
            validate_design(mixed_space, {"solvent": 2})


class TestEncoding:
    def test_numeric_scaling_and_one_hot(self, mixed_space):
        vector = encode_design(mixed_space, {"temperature": 50.0, "solvent": "ethanol", "time": 10.0})
        np.testing.assert_allclose(vector, [0.5, 0.0, 1.0, 0.0, 1.0])

    def test_absent_fields(self, mixed_space):
        vector = encode_design(mixed_space, {})
        np.testing.assert_allclose(vector, [0.5, 0.0, 0.0, 0.0, 0.5])

    def test_absent_numeric_uses_fill_mapping(self, mixed_space):
        vector = encode_design(mixed_space, {}, missing_fill={"temperature": 0.25})
        assert vector[0] == 0.25
        assert vector[4] == 0.5

    def test_decode_inverts_encode(self, mixed_space):
        design = {"temperature": 35.0, "solvent": "dmso", "time": 7.5}
        decoded = mixed_space.decode(encode_design(mixed_space, design))
        assert decoded["solvent"] == "dmso"
        assert decoded["temperature"] == pytest.approx(35.0)
        assert decoded["time"] == pytest.approx(7.5)

    def test_samples_are_valid_encodings(self, mixed_space, rng):
        samples = mixed_space.sample_encoded(rng, 200)
        assert samples.shape == (200, 5)
        assert np.all((samples[:, [0, 4]] >= 0) & (samples[:, [0, 4]] <= 1))
        np.testing.assert_array_equal(samples[:, 1:4].sum(axis=1), np.ones(200))


class TestMasking:
    def test_option_labels(self):
        assert option_labels(3) == ["A", "B", "C"]
        labels = option_labels(28)
        assert labels[25:] == ["Z", "AA", "AB"]
        assert option_labels(702)[-1] == "ZZ"

    def test_too_many_options(self):
        with pytest.raises(CardinalityOverflow):
            option_labels(703)

    def test_masked_space_keeps_geometry(self, mixed_space):
        masked, _ = mask_space(mixed_space)
        assert masked.names == ["X1", "C1", "X2"]
        assert masked.get("X1").lower == 20.0 and masked.get("X1").upper == 80.0
        assert masked.get("X1").unit is None
        assert masked.get("C1").options == ("A", "B", "C")
        assert masked.dimension == mixed_space.dimension

    def test_mask_and_unmask_are_inverse(self, mixed_space):
        _, name_map = mask_space(mixed_space)
        design = {"temperature": 42.0, "solvent": "dmso", "time": 1.0}
        masked = name_map.mask_design(design)
        assert masked == {"X1": 42.0, "C1": "C", "X2": 1.0}
        assert name_map.unmask_design(masked) == design

    def test_unmask_rejects_unknown_label(self, mixed_space):
        _, name_map = mask_space(mixed_space)
        with pytest.raises(UnknownOption):
            name_map.unmask_design({"C1": "D"})
        with pytest.raises(UnknownParameter):
            name_map.unmask_design({"temperature": 30.0})

    def test_masked_encoding_matches_original(self, mixed_space):
        masked, name_map = mask_space(mixed_space)
        design = {"temperature": 70.0, "solvent": "water", "time": 3.0}
        np.testing.assert_array_equal(
            encode_design(masked, name_map.mask_design(design)),
            encode_design(mixed_space, design),
        )
