"""Direct regression baseline: input construction, training, prediction."""

from types import SimpleNamespace

import numpy as np
import pytest

from flowmi.baselines import (
    DirectRegressorParams,
    build_direct_input,
    init_direct,
    predict_direct,
    train_direct,
)
from flowmi.config import config_from_dict
from flowmi.dataset import generate_dataset
from flowmi.errors import ContractError
from flowmi.mmvae import Mask
from flowmi.phantom import FAMILIES, Modality
from flowmi.rng import Rng


def _params(hidden=(8,)):
    return init_direct(
        Rng(3), FAMILIES["dce_triplet"], image_dim=4, hidden=hidden
    )


def _study():
    gen = Rng(11)
    return SimpleNamespace(
        id="b0",
        images={m: gen.uniforms(4).reshape(2, 2) for m in FAMILIES["dce_triplet"]},
    )


def test_input_layout_zero_fill_and_flags():
    params = _params()
    study = _study()
    mask = Mask.from_indices(3, [0, 2])
    x = build_direct_input(params, study, mask)
    assert x.shape == (3 * 4 + 3,)
    assert np.array_equal(x[0:4], study.images[Modality.DCE1].reshape(-1))
    assert np.array_equal(x[4:8], np.zeros(4))  # DCE2 missing -> zeros
    assert np.array_equal(x[8:12], study.images[Modality.DCE3].reshape(-1))
    assert np.array_equal(x[12:], [1.0, 0.0, 1.0])


def test_input_rejects_wrong_mask_length():
    with pytest.raises(ContractError):
        build_direct_input(_params(), _study(), Mask.from_indices(2, [0]))


def test_init_direct_dims():
    params = _params(hidden=(16,))
    assert params.net.dims == (15, 16, 12)
    assert params.n_modalities == 3


def test_predict_direct_composites_observed_and_decodes_missing():
    params = _params()
    study = _study()
    mask = Mask.from_indices(3, [1])
    result = predict_direct(params, study, mask)
    assert np.array_equal(result.composited[Modality.DCE2], study.images[Modality.DCE2])
    for m in (Modality.DCE1, Modality.DCE3):
        assert np.array_equal(result.composited[m], result.decoded[m])
        assert result.decoded[m].shape == (2, 2)


def test_predict_direct_is_deterministic():
    params = _params()
    study = _study()
    mask = Mask.from_indices(3, [0])
    a = predict_direct(params, study, mask)
    b = predict_direct(params, study, mask)
    for m in FAMILIES["dce_triplet"]:
        assert np.array_equal(a.decoded[m], b.decoded[m])


def test_predict_direct_validates_mask_and_coverage():
    params = _params()
    study = _study()
    with pytest.raises(ContractError):
        predict_direct(params, study, Mask.from_indices(3, []))
    partial = SimpleNamespace(id="p", images={Modality.DCE1: study.images[Modality.DCE1]})
    with pytest.raises(ContractError):
        predict_direct(params, partial, Mask.from_indices(3, [1]))


def test_missing_slot_change_does_not_alter_prediction():
    # the network can only see zeros at missing slots, so mutating the
    # underlying missing image must not change the output
    params = _params()
    study = _study()
    mask = Mask.from_indices(3, [0, 2])
    before = predict_direct(params, study, mask)
    study.images[Modality.DCE2] = study.images[Modality.DCE2] + 99.0
    after = predict_direct(params, study, mask)
    for m in FAMILIES["dce_triplet"]:
        assert np.array_equal(before.decoded[m], after.decoded[m])


def test_train_direct_deterministic_and_improves():
    config = config_from_dict(
        {
            "seed": 4,
            "dataset": {"n_studies": 20},
            "model": {"direct_hidden": [8]},
            "optimizer": {"epochs": 10, "effective_batch": 4, "micro_batch": 4,
                          "lr": 3e-3},
        }
    )
    manifest, studies = generate_dataset(seed=config.seed, n_studies=20)
    p1, h1 = train_direct(config, manifest, studies, "ct_pair")
    p2, h2 = train_direct(config, manifest, studies, "ct_pair")
    for a, b in zip(p1.parameters(), p2.parameters()):
        assert np.array_equal(a.data, b.data)
    assert h1.epochs == h2.epochs
    assert h1.last("total") < h1.first("total")
    assert set(h1.train_ids) == set(manifest.ids_of_family("ct_pair", "train"))
