import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedsim.datagen import (
    DatasetError,
    class_proportions,
    generate_federation,
    load_csv_federation,
    load_preset,
    paper13,
    read_client_csv,
    spec_from_preset,
    split_dataset,
    write_client_csv,
    write_federation,
)
from tests import oracles


def _labels(n, attack_share=0.5, seed=0):
    rng = np.random.default_rng(seed)
    y = (np.arange(n) < int(n * attack_share)).astype(int)
    return rng.random((n, 110)), rng.permutation(y)


def test_split_counts_1000():
    train, val, test = split_dataset(_labels(1000), seed=1)
    assert (len(test[1]), len(val[1]), len(train[1])) == (100, 90, 810)


def test_split_counts_minimum():
    train, val, test = split_dataset(_labels(10), seed=1)
    assert (len(test[1]), len(val[1]), len(train[1])) == (1, 1, 8)
    with pytest.raises(DatasetError):
        split_dataset(_labels(9), seed=1)


def test_split_is_stratified():
    train, val, test = split_dataset(_labels(1000, 0.3), seed=4)
    assert test[1].sum() == 30
    assert val[1].sum() == 27


@given(st.integers(10, 400), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_split_partitions_samples(n, share, seed):
    x = np.arange(n, dtype=np.float64)[:, None] * np.ones((1, 110))
    y = (np.random.default_rng(seed).random(n) < share).astype(int)
    parts = split_dataset((x, y), seed)
    ids = [p[0][:, 0].astype(int) for p in parts]
    joined = np.concatenate(ids)
    assert len(joined) == n
    assert len(np.unique(joined)) == n  # disjoint and covering
    assert all(len(i) >= 1 for i in ids)
    for px, py in parts:
        assert np.array_equal(py, y[px[:, 0].astype(int)])


def test_paper13_shape():
    fed = paper13(seed=0)
    assert len(fed) == 13
    sizes = [c.num_samples for c in fed]
    assert min(sizes) == 300 and max(sizes) == 64000
    assert fed[0].attack_name == "WebDDoS"
    assert [c.family for c in fed].count("tcp_like_ood") == 2
    for c in fed:
        assert abs(class_proportions(c)[1] - 0.5) < 0.01
        assert c.flows().shape[1:] == (10, 11)
        assert 0.0 <= c.train_x.min() and c.train_x.max() <= 1.0


def test_generation_is_deterministic():
    a = paper13(seed=3, max_samples=800)
    b = paper13(seed=3, max_samples=800)
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.train_x, cb.train_x)
        assert np.array_equal(ca.test_y, cb.test_y)
    c = paper13(seed=4, max_samples=800)
    assert not np.array_equal(a[1].train_x, c[1].train_x)


def test_scaling_keeps_tiny_client():
    fed = paper13(seed=0, max_samples=8000)
    sizes = [c.num_samples for c in fed]
    assert max(sizes) == 8000 and sizes[0] == 300


def test_ood_profiles_far_from_udp():
    spec = spec_from_preset(load_preset("paper13"), seed=5)
    udp = [c.mean for c in spec.clients if c.family == "udp_like"]
    ood = [c.mean for c in spec.clients if c.family == "tcp_like_ood"]
    udp_max = max(np.linalg.norm(a - b) for i, a in enumerate(udp) for b in udp[i + 1:])
    assert min(np.linalg.norm(a - b) for a in udp for b in ood) >= 3 * udp_max


def test_jsd_udp_pairs_closer_than_cross_pairs():
    fed = paper13(seed=2, max_samples=3000)
    attacks = {c.attack_name: c.train_x[c.train_y == 1] for c in fed}
    fams = {c.attack_name: c.family for c in fed}
    udp = [n for n in attacks if fams[n] == "udp_like"]
    ood = [n for n in attacks if fams[n] == "tcp_like_ood"]
    within = [oracles.jsd_histograms(attacks[a], attacks[b]) for i, a in enumerate(udp) for b in udp[i + 1:]]
    cross = [oracles.jsd_histograms(attacks[a], attacks[b]) for a in udp for b in ood]
    assert min(within) > 0
    assert max(within) < min(cross)


def test_preset_validation_messages():
    with pytest.raises(DatasetError, match="clients: missing"):
        spec_from_preset({"benign": {}, "udp_like": {}, "tcp_like_ood": {}}, seed=0)
    preset = load_preset("paper13")
    preset["clients"][1]["family"] = "icmp"
    with pytest.raises(DatasetError, match="family"):
        spec_from_preset(preset, seed=0)
    with pytest.raises(DatasetError, match="unknown preset"):
        load_preset("nope")


def test_spec_validate_collects_errors():
    spec = spec_from_preset(load_preset("paper13"), seed=0)
    spec.clients[2].num_samples = 5
    spec.clients[3].name = spec.clients[4].name
    with pytest.raises(DatasetError) as err:
        generate_federation(spec)
    assert "clients[2].num_samples" in str(err.value)
    assert "unique" in str(err.value)


def test_csv_roundtrip(tmp_path):
    fed = paper13(seed=1, max_samples=600)
    write_federation(fed, tmp_path)
    assert len(list(tmp_path.glob("*.csv"))) == 13
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["clients"][0]["family"] == "tcp_like_ood"
    loaded = load_csv_federation(tmp_path, seed=1)
    assert [c.attack_name for c in loaded] == [c.attack_name for c in fed]
    assert [c.num_samples for c in loaded] == [c.num_samples for c in fed]
    assert loaded[0].family == "tcp_like_ood"
    x, y = read_client_csv(tmp_path / "00_WebDDoS.csv")
    orig = np.vstack([fed[0].train_x, fed[0].val_x, fed[0].test_x])
    assert np.max(np.abs(x - orig)) < 1e-5


def test_csv_normalises_out_of_range_files(tmp_path):
    x, y = _labels(40)
    write_client_csv(tmp_path / "00_A.csv", x * 200 - 50, y)
    write_client_csv(tmp_path / "01_B.csv", x, y)
    fed = load_csv_federation(tmp_path)
    for c in fed:
        allx = np.vstack([c.train_x, c.val_x, c.test_x])
        assert allx.min() >= 0 and allx.max() <= 1
    raw = load_csv_federation(tmp_path, normalize="never")
    assert np.vstack([raw[0].train_x]).max() > 1


def test_csv_errors_name_file_and_line(tmp_path):
    x, y = _labels(20)
    path = tmp_path / "00_Bad.csv"
    write_client_csv(path, x, y)
    lines = path.read_text().splitlines()
    lines[3] = lines[3].rsplit(",", 1)[0] + ",7"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=r"00_Bad.csv:4"):
        load_csv_federation(tmp_path)
    lines[3] = ",".join(lines[3].split(",")[:50])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=r"00_Bad.csv:4"):
        read_client_csv(path)
    with pytest.raises(DatasetError):
        load_csv_federation(tmp_path / "missing")
