import numpy as np
import pytest

from gmrec.data import ITEM, USER, AttributeId, AttributeValuePair, DataSample


def make_ids(n_user: int, n_item: int):
    users = [AttributeId(i, USER) for i in range(n_user)]
    items = [AttributeId(n_user + j, ITEM) for j in range(n_item)]
    return users, items


def make_sample(n_user: int, n_item: int, vals=None, label=1.0, id_offset: int = 0):
    users = [AttributeId(id_offset + i, USER) for i in range(n_user)]
    items = [AttributeId(id_offset + n_user + j, ITEM) for j in range(n_item)]
    if vals is None:
        vals = [1.0] * (n_user + n_item)
    return DataSample(
        user_chars=tuple(AttributeValuePair(a, float(v)) for a, v in zip(users, vals[:n_user])),
        item_chars=tuple(AttributeValuePair(a, float(v)) for a, v in zip(items, vals[n_user:])),
        label=label,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
