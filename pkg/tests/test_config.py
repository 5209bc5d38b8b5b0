from pathlib import Path

import pytest
import yaml

from noisyjoint import config
from noisyjoint.trainer import ConfigError


def write(tmp_path, doc, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def base_doc():
    return {"schema_version": 1, "dataset": {"path": "data/d.njd", "n_train": 64},
            "noise": {"discrete_rates": [0.4]}, "experiment": {"mode": "noisy_baseline", "iterations": 100}}


def test_load_resolves_paths_relative_to_file(tmp_path):
    sub = tmp_path / "cfgs"
    sub.mkdir()
    c = config.load(write(sub, base_doc()))
    assert c.dataset_path == (sub / "data" / "d.njd").resolve()
    assert c.experiment.dataset == str(c.dataset_path)
    assert c.dataset.n_train == 64 and c.experiment.iterations == 100


@pytest.mark.parametrize("section,key", [("<root>", "extras"), ("dataset", "n_tran"), ("experiment", "lamda"),
                                         ("noise", "rates"), ("sweep", "grid"), ("ablate", "n")])
def test_unknown_keys_rejected_by_name(tmp_path, section, key):
    doc = base_doc()
    if section == "<root>":
        doc[key] = 1
    else:
        doc.setdefault(section, {})[key] = 1
    with pytest.raises(ConfigError) as exc:
        config.load(write(tmp_path, doc))
    assert key in str(exc.value)


@pytest.mark.parametrize("mutate,key", [
    (lambda d: d.update(schema_version=2), "schema_version"),
    (lambda d: d["experiment"].update(iterations="many"), "experiment.iterations"),
    (lambda d: d["experiment"].update(iterations=10.5), "experiment.iterations"),
    (lambda d: d["experiment"].update(no_joint=True, no_marginal=True, mode="proposed"), "no_marginal"),
    (lambda d: d["experiment"].update(no_decoder="yes"), "experiment.no_decoder"),
    (lambda d: d["noise"].update(discrete_rates=[1.2]), "noise"),
    (lambda d: d["dataset"].update(n_classes=1), "dataset"),
    (lambda d: d.update(sweep={"lambdas": [0.2, 0.2]}), "sweep"),
])
def test_invalid_values(tmp_path, mutate, key):
    doc = base_doc()
    mutate(doc)
    with pytest.raises(ConfigError) as exc:
        config.load(write(tmp_path, doc))
    assert exc.value.key.startswith(key)


def test_dataset_key_not_allowed_in_experiment(tmp_path):
    doc = base_doc()
    doc["experiment"]["dataset"] = "x"
    with pytest.raises(ConfigError, match="experiment.dataset"):
        config.load(write(tmp_path, doc))


def test_dump_round_trip(tmp_path):
    c = config.load(write(tmp_path, base_doc()))
    again = config.parse(config.dump(c), tmp_path)
    assert again.experiment == c.experiment and again.dataset == c.dataset and again.noise == c.noise
    assert again.dataset_path == c.dataset_path


def test_shipped_presets_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.rglob("*.yaml"))
    assert files
    for f in files:
        config.load(f)
