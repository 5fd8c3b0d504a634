from __future__ import annotations

import csv

import numpy as np
import pytest

from distreg.datasets import BOSTON_SIZES, boston_path, resolve
from distreg.errors import ConfigurationError, DataError
from distreg.partition import dummy_names, partition_csv, split_indices


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_sizes_are_respected():
    parts = split_indices(506, BOSTON_SIZES, seed=1)
    assert [len(p) for p in parts] == list(BOSTON_SIZES)
    assert sorted(np.concatenate(parts).tolist()) == list(range(506))
    assert all(np.all(np.diff(p) > 0) for p in parts)


def test_contiguous_split():
    parts = split_indices(10, [3, 7], shuffle=False)
    assert parts[0].tolist() == [0, 1, 2] and parts[1].tolist() == list(range(3, 10))


def test_equal_parts():
    assert [len(p) for p in split_indices(10, k=3)] == [4, 3, 3]


def test_seed_reproducible_and_sensitive():
    a = split_indices(100, k=4, seed=7)
    b = split_indices(100, k=4, seed=7)
    c = split_indices(100, k=4, seed=8)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_pcg64_stream_is_pinned():
    # a generator change would silently reshuffle every seeded experiment
    assert split_indices(6, k=2, seed=0)[0].tolist() == sorted(
        np.random.Generator(np.random.PCG64(0)).permutation(6)[:3].tolist())


@pytest.mark.parametrize("kwargs", [dict(sizes=[5, 4]), dict(sizes=[10, 0]), dict(k=0), dict()])
def test_bad_sizes(kwargs):
    with pytest.raises(ConfigurationError):
        split_indices(10, **kwargs)


def test_single_part_is_a_copy(tmp_path):
    paths = partition_csv(boston_path(), tmp_path, "b", k=1, shuffle=False)
    assert [p.name for p in paths] == ["b_1.csv", "b.csv"]
    assert (tmp_path / "b_1.csv").read_bytes().replace(b"\r\n", b"\n") == \
        boston_path().read_bytes().replace(b"\r\n", b"\n")


def test_dummies(tmp_path):
    partition_csv(boston_path(), tmp_path, "b", sizes=BOSTON_SIZES, shuffle=False, dummies=True)
    for j, n in enumerate(BOSTON_SIZES, start=1):
        rows = _rows(tmp_path / f"b_{j}.csv")
        assert rows[0][-2:] == dummy_names(3)
        assert len(rows) - 1 == n
        expected = [str(int(j == 2)), str(int(j == 3))]
        assert all(r[-2:] == expected for r in rows[1:])
    pooled = _rows(tmp_path / "b.csv")
    assert len(pooled) == 507


def test_rows_copied_verbatim(tmp_path):
    partition_csv(boston_path(), tmp_path, "b", k=3, seed=11, pooled=False)
    original = _rows(boston_path())
    seen = [r for j in (1, 2, 3) for r in _rows(tmp_path / f"b_{j}.csv")[1:]]
    assert sorted(seen) == sorted(original[1:])
    assert not (tmp_path / "b.csv").exists()


def test_dummy_clash(tmp_path):
    src = tmp_path / "x.csv"
    src.write_text("a,dummy_dp_var2\n1,0\n2,1\n")
    with pytest.raises(ConfigurationError):
        partition_csv(src, tmp_path / "o", "x", k=2, dummies=True)


def test_missing_source(tmp_path):
    with pytest.raises(DataError):
        partition_csv(tmp_path / "nope.csv", tmp_path, "x", k=2)


def test_builtin_name():
    assert resolve("boston") == boston_path()
    assert _rows(boston_path())[0] == ["crim", "indus", "dis", "medv", "medv_high_flag"]
    assert sum(r[-1] == "1" for r in _rows(boston_path())[1:]) == 260
