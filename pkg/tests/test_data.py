import numpy as np
import pytest

from zisae.data import (PopulationFrame, SampleFrame, area_means, build_population, build_sample,
                        restrict_positive)
from zisae.errors import NoPositiveResponsesError, SchemaError


def rows(*spec):
    return [{"area": a, "x1": x, "response": r} for a, x, r in spec]


def test_counts_three_rows():
    pop = build_population(rows(("A", 1, 0), ("A", 2, 1), ("B", 3, 2)))
    assert pop.J == 2 and pop.N == 3
    assert dict(zip(pop.area_ids, pop.counts)) == {"A": 2, "B": 1}


def test_lexicographic_area_order():
    pop = build_population(rows(("b", 1, 0), ("a", 2, 1), ("c", 3, 2), ("a", 1, 1)))
    assert pop.area_ids == ("a", "b", "c")
    assert pop.counts.sum() == pop.N


def test_negative_response_rejected():
    with pytest.raises(SchemaError, match="negative"):
        build_population(rows(("A", 1, -0.5)))


def test_missing_covariate_names_row_and_column():
    r = rows(("A", 1, 0), ("A", "", 1))
    with pytest.raises(SchemaError, match=r"row 1.*'x1'"):
        build_population(r)


def test_inconsistent_arity():
    r = rows(("A", 1, 0), ("A", 2, 1))
    r[1]["x2"] = 3
    with pytest.raises(SchemaError, match="arity"):
        build_population(r)


def test_unknown_stratum_level():
    r = [{"area": "A", "x1": 1, "stratum": "z"}]
    with pytest.raises(SchemaError, match="unknown stratum"):
        build_population(r, strata_levels=("h1", "h2"))


def test_inventory_scale_counts():
    rng = np.random.default_rng(0)
    areas = rng.integers(0, 17, 11848)
    areas[:17] = np.arange(17)
    pop = PopulationFrame.from_arrays([f"c{a:02d}" for a in areas], rng.normal(size=(11848, 2)))
    assert pop.J == 17 and pop.N == 11848


def test_unit_records_and_indicator(toy_pop):
    units = toy_pop.units
    assert len(units) == toy_pop.N
    assert [u.z for u in units] == [0, 1, 1, 0, 1]
    assert np.array_equal(toy_pop.z, [False, True, True, False, True])


def test_area_means_match_raw_means(toy_pop):
    am = area_means(toy_pop)
    assert np.allclose(am.means, [[1, 1.5], [1, 4.0]])
    assert np.array_equal(am.counts, [2, 3])
    assert np.array_equal(am.strata_counts, [[1, 1], [2, 1]])
    assert np.array_equal(am.strata_counts.sum(1), am.counts)


def test_sample_requires_response():
    with pytest.raises(SchemaError, match="no response"):
        build_sample([{"area": "A", "x1": 1, "response": ""}])


def test_restrict_positive_exact():
    s = SampleFrame.from_arrays(["A", "A", "B", "C"], [[1.0], [2.0], [3.0], [4.0]], [0.0, 2.0, 0.0, 3.0])
    pos = restrict_positive(s)
    assert np.array_equal(pos.y, [2.0, 3.0])
    assert pos.area_ids == ("A", "C")
    assert s.restrict_positive().N == 2


def test_restrict_positive_all_zero():
    s = SampleFrame.from_arrays(["A", "B"], [[1.0], [2.0]], [0.0, 0.0])
    with pytest.raises(NoPositiveResponsesError):
        restrict_positive(s)


def test_frames_are_read_only(toy_pop):
    with pytest.raises(ValueError):
        toy_pop.y[0] = 1.0


def test_take_drops_empty_areas(toy_pop):
    sub = toy_pop.take([2, 3])
    assert sub.area_ids == ("B",)
    assert sub.N == 2


def test_codes_in_unknown_area(toy_pop):
    s = SampleFrame.from_arrays(["Q"], [[1.0]], [1.0])
    with pytest.raises(SchemaError, match="absent"):
        s.codes_in(toy_pop.area_ids)
