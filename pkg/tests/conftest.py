import pytest

from _datasets import build_color_patch_root, build_digits_root, build_texture_root


@pytest.fixture(scope="session")
def data_root(tmp_path_factory):
    """One directory holding all three desk-scale datasets in real formats."""
    root = tmp_path_factory.mktemp("data")
    build_digits_root(root)
    build_texture_root(root)
    build_color_patch_root(root)
    return str(root)
