"""Non-IID, unbalanced client federations.

Two sources: a seeded synthetic generator (Gaussian attack profiles around a
shared benign mixture, one attack type per client) and a directory of
preprocessed per-client CSV files. Both end in the same 90/10 train/test
split with 10% of the training part held out for validation.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .nn import INPUT_SHAPE, LAYER_SIZES

log = logging.getLogger(__name__)

NUM_FEATURES = LAYER_SIZES[0]
FAMILIES = ("udp_like", "tcp_like_ood")
CSV_HEADER = [f"f{i}" for i in range(NUM_FEATURES)] + ["label"]


class DatasetError(ValueError):
    """Malformed input data, with file/line context where available."""


@dataclass
class ClientDataset:
    client_id: int
    attack_name: str
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    family: str = "unknown"

    @property
    def train(self):
        return self.train_x, self.train_y

    @property
    def val(self):
        return self.val_x, self.val_y

    @property
    def test(self):
        return self.test_x, self.test_y

    @property
    def num_train(self) -> int:
        return int(self.train_y.shape[0])

    @property
    def num_samples(self) -> int:
        return int(self.train_y.shape[0] + self.val_y.shape[0] + self.test_y.shape[0])

    @property
    def class_proportions(self) -> np.ndarray:
        return class_proportions(self)

    def flows(self, split: str = "train") -> np.ndarray:
        """Samples of one split as (n, 10, 11) packet windows."""
        x = getattr(self, f"{split}_x")
        return x.reshape((-1,) + INPUT_SHAPE)


@dataclass
class ClientProfile:
    name: str
    num_samples: int
    family: str
    mean: np.ndarray
    noise: float


@dataclass
class FederationSpec:
    clients: list[ClientProfile]
    benign_means: np.ndarray
    benign_weights: np.ndarray
    benign_noise: float
    seed: int
    preset: str = "custom"
    min_profile_distance: float = 0.0
    ood_distance_factor: float = 0.0

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    def validate(self) -> None:
        errors = []
        if not self.clients:
            errors.append("clients: at least one client is required")
        for i, c in enumerate(self.clients):
            if c.num_samples < 10:
                errors.append(f"clients[{i}].num_samples: {c.num_samples} is below the minimum of 10")
            if c.family not in FAMILIES:
                errors.append(f"clients[{i}].family: {c.family!r} not in {FAMILIES}")
            if np.shape(c.mean) != (NUM_FEATURES,):
                errors.append(f"clients[{i}].mean: expected {NUM_FEATURES} values")
            if c.noise < 0:
                errors.append(f"clients[{i}].noise: must be >= 0")
        names = [c.name for c in self.clients]
        if len(set(names)) != len(names):
            errors.append("clients: attack names must be unique (one attack profile per client)")
        if self.benign_means.ndim != 2 or self.benign_means.shape[1] != NUM_FEATURES:
            errors.append(f"benign_means: expected shape (k, {NUM_FEATURES})")
        if errors:
            raise DatasetError("; ".join(errors))

    def summary(self) -> dict:
        return {
            "preset": self.preset,
            "seed": self.seed,
            "clients": [
                {"name": c.name, "samples": c.num_samples, "family": c.family}
                for c in self.clients
            ],
        }


def load_preset(name_or_path: str) -> dict:
    """Read a preset by bundled name (``paper13``) or from a JSON file."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        text = path.read_text(encoding="utf-8")
    else:
        try:
            text = resources.files("fedsim.presets").joinpath(f"{name_or_path}.json").read_text(
                encoding="utf-8"
            )
        except FileNotFoundError:
            raise DatasetError(f"unknown preset {name_or_path!r}") from None
    return json.loads(text)


def _scaled_sizes(sizes, max_samples, min_samples):
    if max_samples is None or max(sizes) <= max_samples:
        return list(sizes)
    factor = max_samples / max(sizes)
    return [max(int(round(n * factor)), min(n, min_samples)) for n in sizes]


def spec_from_preset(
    preset: dict,
    seed: int,
    max_samples: Optional[int] = None,
    min_samples: int = 300,
) -> FederationSpec:
    """Expand a compact preset into explicit profile means.

    Benign components sit near ``center``. Each attack mean is
    ``center + offset * direction`` plus per-profile jitter, where
    ``direction`` is a random sign vector chosen by ``axis``: ``shared``
    (the default for udp_like, so those profiles cluster together),
    ``opposite`` (the shared vector negated) or ``independent`` (a fresh
    vector per profile, the tcp_like_ood default). Client entries may
    override ``offset``, ``jitter``, ``noise`` and ``axis`` of their family.
    """
    errors = []
    for key in ("clients", "benign", "udp_like", "tcp_like_ood"):
        if key not in preset:
            errors.append(f"{key}: missing")
    if errors:
        raise DatasetError("; ".join(errors))

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    sign = rng.choice([-1.0, 1.0], size=NUM_FEATURES)
    benign = preset["benign"]
    center = float(benign.get("center", 0.5))
    k = int(benign.get("components", 1))
    benign_means = center + rng.normal(0.0, benign.get("component_spread", 0.0), size=(k, NUM_FEATURES))
    benign_weights = np.full(k, 1.0 / k)

    sizes = _scaled_sizes([int(c["samples"]) for c in preset["clients"]], max_samples, min_samples)
    min_dist = float(preset.get("min_profile_distance", 0.0))
    clients = []
    for entry, size in zip(preset["clients"], sizes):
        family = entry.get("family", "udp_like")
        if family not in FAMILIES:
            raise DatasetError(f"clients[{entry.get('name')}].family: {family!r} not in {FAMILIES}")
        params = {**preset[family], **{k: entry[k] for k in ("offset", "jitter", "noise", "axis") if k in entry}}
        axis = params.get("axis", "shared" if family == "udp_like" else "independent")
        if axis == "shared":
            direction = sign
        elif axis == "opposite":
            direction = -sign
        elif axis == "independent":
            direction = rng.choice([-1.0, 1.0], size=NUM_FEATURES)
        else:
            raise DatasetError(f"clients[{entry['name']}].axis: {axis!r} not in (shared, opposite, independent)")
        base = center + float(params["offset"]) * direction
        # redraw until the profile is far enough from the ones already placed
        for _ in range(100):
            mean = np.clip(base + rng.normal(0.0, params["jitter"], NUM_FEATURES), 0.0, 1.0)
            if all(np.linalg.norm(mean - c.mean) >= min_dist for c in clients):
                break
        else:
            raise DatasetError(f"could not place profile {entry['name']} {min_dist} away from others")
        clients.append(ClientProfile(entry["name"], size, family, mean, float(params["noise"])))

    spec = FederationSpec(
        clients=clients,
        benign_means=benign_means,
        benign_weights=benign_weights,
        benign_noise=float(benign.get("noise", 0.08)),
        seed=seed,
        preset=preset.get("name", "custom"),
        min_profile_distance=min_dist,
        ood_distance_factor=float(preset.get("ood_distance_factor", 0.0)),
    )
    _check_ood_separation(spec)
    return spec


def _check_ood_separation(spec: FederationSpec) -> None:
    udp = [c.mean for c in spec.clients if c.family == "udp_like"]
    ood = [c.mean for c in spec.clients if c.family == "tcp_like_ood"]
    if len(udp) < 2 or not ood or spec.ood_distance_factor <= 0:
        return
    udp_max = max(np.linalg.norm(a - b) for i, a in enumerate(udp) for b in udp[i + 1:])
    cross_min = min(np.linalg.norm(a - b) for a in udp for b in ood)
    if cross_min < spec.ood_distance_factor * udp_max:
        raise DatasetError(
            f"ood profiles too close: {cross_min:.3f} < {spec.ood_distance_factor} x {udp_max:.3f}"
        )


def _apportion(total: int, counts: np.ndarray) -> np.ndarray:
    """Split ``total`` slots across classes proportionally (largest remainder),
    then make sure every class with spare samples gets a slot if possible."""
    n = counts.sum()
    exact = total * counts / n
    alloc = np.floor(exact).astype(int)
    order = sorted(range(len(counts)), key=lambda c: (-(exact[c] - alloc[c]), c))
    for c in order[: total - alloc.sum()]:
        alloc[c] += 1
    if total >= len(counts):
        for c in range(len(counts)):
            if alloc[c] == 0 and counts[c] >= 2:
                donor = int(np.argmax(alloc))
                if alloc[donor] > 1:
                    alloc[donor] -= 1
                    alloc[c] += 1
    return alloc


def split_dataset(samples, seed):
    """Stratified 10% test, then 10% of the remainder as validation.

    Split sizes are floors with a minimum of one sample each. Returns three
    ``(x, y)`` pairs: train, val, test.
    """
    x, y = samples
    x = np.asarray(x, dtype=np.float64).reshape(len(y), -1)
    y = np.asarray(y).astype(np.int64)
    n = y.shape[0]
    if n < 10:
        raise DatasetError(f"need at least 10 samples to split, got {n}")
    n_test = max(1, n // 10)
    n_val = max(1, (n - n_test) // 10)

    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    members = [rng.permutation(np.flatnonzero(y == c)) for c in classes]
    counts = np.array([len(m) for m in members])
    test_alloc = _apportion(n_test, counts)
    val_alloc = _apportion(n_val, counts - test_alloc)

    parts = {"train": [], "val": [], "test": []}
    for m, t, v in zip(members, test_alloc, val_alloc):
        parts["test"].append(m[:t])
        parts["val"].append(m[t:t + v])
        parts["train"].append(m[t + v:])
    out = []
    for name in ("train", "val", "test"):
        idx = np.sort(np.concatenate(parts[name]))
        out.append((x[idx], y[idx]))
    return tuple(out)


def class_proportions(dataset) -> np.ndarray:
    """[p_benign, p_attack] over the training labels."""
    y = dataset.train_y if isinstance(dataset, ClientDataset) else np.asarray(dataset)
    if len(y) == 0:
        raise DatasetError("class proportions of an empty training split")
    p_attack = float(np.mean(y == 1))
    return np.array([1.0 - p_attack, p_attack])


def _generate_client(spec: FederationSpec, cid: int, seed_seq) -> ClientDataset:
    profile = spec.clients[cid]
    rng = np.random.default_rng(seed_seq)
    n_attack = profile.num_samples // 2
    n_benign = profile.num_samples - n_attack
    comp = rng.choice(len(spec.benign_weights), size=n_benign, p=spec.benign_weights)
    benign = spec.benign_means[comp] + rng.normal(0.0, spec.benign_noise, (n_benign, NUM_FEATURES))
    attack = profile.mean + rng.normal(0.0, profile.noise, (n_attack, NUM_FEATURES))
    x = np.clip(np.vstack([benign, attack]), 0.0, 1.0)
    y = np.concatenate([np.zeros(n_benign, dtype=np.int64), np.ones(n_attack, dtype=np.int64)])
    split_seed = int(rng.integers(2**63))
    (trx, tr_y), (vx, vy), (tex, tey) = split_dataset((x, y), split_seed)
    return ClientDataset(cid, profile.name, trx, tr_y, vx, vy, tex, tey, family=profile.family)


def generate_federation(spec: FederationSpec) -> list[ClientDataset]:
    """Sample every client's dataset; each client has its own spawned seed."""
    spec.validate()
    seeds = np.random.SeedSequence([spec.seed, 0xDA7A]).spawn(spec.num_clients)
    return [_generate_client(spec, cid, seeds[cid]) for cid in range(spec.num_clients)]


def paper13(seed: int = 0, max_samples: Optional[int] = None, min_samples: int = 300) -> list[ClientDataset]:
    """Convenience: the bundled 13-client preset, optionally scaled down."""
    return generate_federation(spec_from_preset(load_preset("paper13"), seed, max_samples, min_samples))


# CSV interchange -----------------------------------------------------------

def write_client_csv(path, x: np.ndarray, y: np.ndarray) -> None:
    data = np.column_stack([np.asarray(x).reshape(len(y), -1), np.asarray(y)])
    fmt = ["%.6g"] * NUM_FEATURES + ["%d"]
    np.savetxt(path, data, fmt=fmt, delimiter=",", header=",".join(CSV_HEADER), comments="", encoding="utf-8")


def _scan_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Line-by-line parse used to locate the first bad row."""
    rows, labels = [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise DatasetError(f"{path}: empty file")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            cols = line.rstrip("\r\n").split(",")
            if len(cols) != NUM_FEATURES + 1:
                raise DatasetError(
                    f"{path}:{lineno}: expected {NUM_FEATURES + 1} columns, got {len(cols)}"
                )
            try:
                values = [float(v) for v in cols]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: non-numeric value ({exc})") from None
            if not np.all(np.isfinite(values)):
                raise DatasetError(f"{path}:{lineno}: non-finite value")
            if values[-1] not in (0.0, 1.0):
                raise DatasetError(f"{path}:{lineno}: label {cols[-1]!r} not in {{0,1}}")
            rows.append(values[:-1])
            labels.append(int(values[-1]))
    if not rows:
        raise DatasetError(f"{path}: no samples")
    return np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64)


def read_client_csv(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if path.stat().st_size == 0:
        raise DatasetError(f"{path}: empty file")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, encoding="utf-8")
    except ValueError:
        return _scan_csv(path)
    if data.shape[0] == 0:
        raise DatasetError(f"{path}: no samples")
    if data.shape[1] != NUM_FEATURES + 1 or not np.all(np.isfinite(data)):
        return _scan_csv(path)
    y = data[:, -1]
    if not np.all((y == 0) | (y == 1)):
        return _scan_csv(path)
    return data[:, :-1].copy(), y.astype(np.int64)


def minmax_normalize(x: np.ndarray) -> np.ndarray:
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    span[span == 0] = 1.0
    return (x - lo) / span


def _attack_name(stem: str) -> str:
    m = re.match(r"^\d+_(.+)$", stem)
    return m.group(1) if m else stem


def load_csv_federation(directory_path, seed: int = 0, normalize: str = "auto") -> list[ClientDataset]:
    """One client per ``*.csv`` file, ids assigned in sorted filename order.

    normalize: ``auto`` min-max scales a file's feature columns only when
    some value falls outside [0, 1]; ``always`` / ``never`` force it.
    """
    if normalize not in ("auto", "always", "never"):
        raise ValueError(f"normalize must be auto, always or never, got {normalize!r}")
    root = Path(directory_path)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    files = sorted(root.glob("*.csv"))
    if not files:
        raise DatasetError(f"{root}: no CSV files")
    families = {}
    manifest = root / "manifest.json"
    if manifest.exists():
        for c in json.loads(manifest.read_text(encoding="utf-8")).get("clients", []):
            families[c["name"]] = c.get("family", "unknown")

    clients = []
    for cid, path in enumerate(files):
        x, y = read_client_csv(path)
        out_of_range = x.min() < 0.0 or x.max() > 1.0
        if normalize == "always" or (normalize == "auto" and out_of_range):
            x = minmax_normalize(x)
        name = _attack_name(path.stem)
        split_seed = np.random.SeedSequence([seed, cid]).generate_state(1)[0]
        try:
            (trx, tr_y), (vx, vy), (tex, tey) = split_dataset((x, y), int(split_seed))
        except DatasetError as exc:
            raise DatasetError(f"{path}: {exc}") from None
        clients.append(ClientDataset(cid, name, trx, tr_y, vx, vy, tex, tey, families.get(name, "unknown")))
    return clients


def write_federation(clients: list[ClientDataset], out_dir, spec: Optional[FederationSpec] = None) -> Path:
    """Write one CSV per client (all splits merged back) plus manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for c in clients:
        x = np.vstack([c.train_x, c.val_x, c.test_x])
        y = np.concatenate([c.train_y, c.val_y, c.test_y])
        write_client_csv(out / f"{c.client_id:02d}_{c.attack_name}.csv", x, y)
    manifest = spec.summary() if spec is not None else {}
    manifest.setdefault("clients", [
        {"name": c.attack_name, "samples": c.num_samples, "family": c.family} for c in clients
    ])
    manifest["format"] = {"columns": CSV_HEADER[0] + ".." + CSV_HEADER[-2] + ",label", "packets": INPUT_SHAPE[0], "features_per_packet": INPUT_SHAPE[1]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return out
