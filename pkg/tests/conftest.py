import pytest

from ds_helpers import make_dataset
from sumrec.corpus import save_dataset


@pytest.fixture
def small_dataset():
    return make_dataset()


@pytest.fixture
def dataset_dir(tmp_path, small_dataset):
    root = tmp_path / "dataset"
    save_dataset(small_dataset, root)
    return root
