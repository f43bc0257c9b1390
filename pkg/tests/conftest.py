import copy
import json

import pytest

SMALL = {
    "seed": 0,
    "output_dir": "run",
    "data": {"synthetic": {"num_train_classes": 6, "num_test_classes": 6, "samples_per_class": 6,
                           "input_dim": 8, "cluster_spread": 0.5, "center_scale": 1.0}},
    "model": {"hidden": [16], "embedding_dim": 8},
    "loss": {"variant": "NormSoftmax", "gamma": 16.0},
    "memvir": {"n_steps": 2, "margin": 1, "warmup_steps": 4, "mode": "Full"},
    "optimizer": {"kind": "Adam", "learning_rate": 0.001},
    "batch_size": 12,
    "classes_per_batch": 6,
    "epochs": 6,
    "eval_every": 6,
    "recall_ks": [1, 2],
}


@pytest.fixture
def small_doc():
    return copy.deepcopy(SMALL)


@pytest.fixture
def write_config(tmp_path):
    def _write(doc, name="cfg.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc))
        return path

    return _write
