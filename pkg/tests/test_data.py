import numpy as np
import pytest

from sparseps.data import Dataset, add_intercept, read_dataset_csv, write_dataset_csv
from sparseps.exceptions import DataFormatError


def test_from_arrays_infers_delta_from_nan():
    X = np.array([[1.0], [2.0], [3.0]])
    y = np.array([0.5, np.nan, 1.5])
    data = Dataset.from_arrays(X, y)
    assert list(data.delta) == [1, 0, 1]
    assert data.x.shape == (3, 2)
    assert np.all(data.x[:, 0] == 1.0)


def test_requires_intercept_column():
    with pytest.raises(DataFormatError, match="intercept"):
        Dataset(x=np.array([[2.0, 1.0]]), y=np.array([1.0]), delta=np.array([1]))


def test_observed_rows_need_finite_y():
    with pytest.raises(DataFormatError, match="row 2"):
        Dataset(
            x=np.ones((2, 1)),
            y=np.array([1.0, np.nan]),
            delta=np.array([1, 1]),
        )


def test_delta_zero_one_only():
    with pytest.raises(DataFormatError, match="0 or 1"):
        Dataset(x=np.ones((1, 1)), y=np.array([1.0]), delta=np.array([2]))


def test_arrays_read_only():
    data = Dataset.from_arrays(np.zeros((2, 1)), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        data.y[0] = 9.0


def test_add_intercept_shape():
    assert add_intercept(np.zeros((4, 2))).shape == (4, 3)


def test_csv_round_trip(tmp_path):
    X = np.array([[0.5, -1.0], [1.5, 2.0], [0.0, 0.25]])
    y = np.array([1.25, np.nan, -0.5])
    data = Dataset.from_arrays(X, y)
    path = tmp_path / "toy.csv"
    write_dataset_csv(data, path, names=["a", "b"])
    loaded, names = read_dataset_csv(path)
    assert names == ["a", "b"]
    assert np.allclose(loaded.x, data.x)
    assert list(loaded.delta) == list(data.delta)
    assert np.allclose(loaded.y[loaded.delta == 1], data.y[data.delta == 1])


def test_csv_header_contract(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("delta,y,x1\n1,2,3\n")
    with pytest.raises(DataFormatError, match="header"):
        read_dataset_csv(path)


def test_csv_nonempty_y_with_delta_zero_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y,delta,x1\n1.0,1,0.2\n3.0,0,0.1\n")
    with pytest.raises(DataFormatError, match="row 2"):
        read_dataset_csv(path)


def test_csv_missing_y_with_delta_one_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y,delta,x1\n,1,0.2\n")
    with pytest.raises(DataFormatError, match="row 1"):
        read_dataset_csv(path)


def test_csv_field_count_checked(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y,delta,x1\n1.0,1\n")
    with pytest.raises(DataFormatError, match="row 1"):
        read_dataset_csv(path)
