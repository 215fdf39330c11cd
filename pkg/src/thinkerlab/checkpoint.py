"""Checkpoint format: a JSON manifest plus one raw little-endian binary blob.

``<prefix>.json`` lists every array (name, shape, dtype, offset, byte count,
crc32) along with free-form metadata; ``<prefix>.bin`` is the concatenation
of the arrays' raw bytes. Loads verify sizes and checksums before returning
anything, so a tampered or truncated file raises IntegrityError with no
partial result. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np
import torch

from .clustering import ClusterModel
from .config import GanConfig, PolicyNetConfig
from .errors import IntegrityError
from .ppo import ImpalaCnn
from .styletransfer import Discriminator, Generator, TranslatorModel

FORMAT_VERSION = 1


def save_arrays(prefix: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        shape = list(arr.shape)
        arr = np.ascontiguousarray(arr)  # may promote 0-d to 1-d; shape captured above
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append(
            {
                "name": name,
                "shape": shape,
                "dtype": np.dtype(arr.dtype).name,
                "offset": offset,
                "nbytes": len(raw),
                "crc32": zlib.crc32(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = {"format_version": FORMAT_VERSION, "meta": meta or {}, "arrays": entries}
    prefix.with_suffix(".bin").write_bytes(b"".join(blobs))
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_arrays(prefix: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    prefix = Path(prefix)
    manifest_path = prefix.with_suffix(".json")
    bin_path = prefix.with_suffix(".bin")
    if not manifest_path.exists() or not bin_path.exists():
        raise IntegrityError(f"missing checkpoint file(s) at {prefix}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"{manifest_path}: manifest is not valid JSON") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(f"{manifest_path}: unsupported format version")
    blob = bin_path.read_bytes()
    entries = manifest["arrays"]
    total = sum(e["nbytes"] for e in entries)
    if len(blob) != total:
        raise IntegrityError(
            f"{bin_path}: payload is {len(blob)} bytes but manifest declares {total}"
        )
    arrays: dict[str, np.ndarray] = {}
    for e in entries:
        dtype = np.dtype(e["dtype"]).newbyteorder("<")
        expected = int(np.prod(e["shape"], dtype=np.int64)) * dtype.itemsize
        if expected != e["nbytes"]:
            raise IntegrityError(
                f"{manifest_path}: array {e['name']!r} shape {e['shape']} does not match "
                f"declared byte count {e['nbytes']}"
            )
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        if zlib.crc32(raw) != e["crc32"]:
            raise IntegrityError(f"{bin_path}: checksum mismatch for array {e['name']!r}")
        arr = np.frombuffer(raw, dtype=dtype).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return arrays, manifest["meta"]


def _state_dict_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def _load_state_dict(module: torch.nn.Module, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    state = {}
    for key, arr in arrays.items():
        if prefix and not key.startswith(prefix):
            continue
        state[key[len(prefix):]] = torch.from_numpy(arr.copy())
    module.load_state_dict(state)


def save_policy(prefix: str | Path, model: ImpalaCnn) -> None:
    meta = {
        "kind": "policy",
        "action_count": model.action_count,
        "obs_size": model.obs_size,
        "channels": list(model.net_config.channels),
        "dense": model.net_config.dense,
    }
    save_arrays(prefix, _state_dict_arrays(model), meta)


def load_policy(prefix: str | Path) -> ImpalaCnn:
    arrays, meta = load_arrays(prefix)
    if meta.get("kind") != "policy":
        raise IntegrityError(f"{prefix}: checkpoint is not a policy (kind={meta.get('kind')!r})")
    net = PolicyNetConfig(channels=tuple(meta["channels"]), dense=meta["dense"])
    model = ImpalaCnn(meta["action_count"], meta["obs_size"], net)
    _load_state_dict(model, arrays)
    return model


def save_translator(prefix: str | Path, model: TranslatorModel) -> None:
    arrays = {f"g.{k}": v for k, v in _state_dict_arrays(model.generator).items()}
    arrays.update({f"d.{k}": v for k, v in _state_dict_arrays(model.discriminator).items()})
    meta = {
        "kind": "translator",
        "n_clusters": model.n_clusters,
        "gan": {
            "base_channels": model.config.base_channels,
            "res_blocks": model.config.res_blocks,
            "lambda_cls": model.config.lambda_cls,
            "lambda_rec": model.config.lambda_rec,
            "lambda_gp": model.config.lambda_gp,
        },
    }
    save_arrays(prefix, arrays, meta)


def load_translator(prefix: str | Path) -> TranslatorModel:
    arrays, meta = load_arrays(prefix)
    if meta.get("kind") != "translator":
        raise IntegrityError(f"{prefix}: checkpoint is not a translator")
    gan = GanConfig(
        base_channels=meta["gan"]["base_channels"],
        res_blocks=meta["gan"]["res_blocks"],
        lambda_cls=meta["gan"]["lambda_cls"],
        lambda_rec=meta["gan"]["lambda_rec"],
        lambda_gp=meta["gan"]["lambda_gp"],
    )
    n = meta["n_clusters"]
    generator = Generator(n, gan.base_channels, gan.res_blocks)
    discriminator = Discriminator(n, gan.base_channels)
    _load_state_dict(generator, arrays, "g.")
    _load_state_dict(discriminator, arrays, "d.")
    return TranslatorModel(generator, discriminator, n, gan)


def save_cluster_model(prefix: str | Path, model: ClusterModel) -> None:
    arrays = {
        "weights": model.weights,
        "means": model.means,
        "variances": model.variances,
    }
    save_arrays(prefix, arrays, {"kind": "clusters", "feature_extractor_id": model.feature_extractor_id})


def load_cluster_model(prefix: str | Path) -> ClusterModel:
    arrays, meta = load_arrays(prefix)
    if meta.get("kind") != "clusters":
        raise IntegrityError(f"{prefix}: checkpoint is not a cluster model")
    return ClusterModel(
        weights=arrays["weights"].copy(),
        means=arrays["means"].copy(),
        variances=arrays["variances"].copy(),
        feature_extractor_id=meta["feature_extractor_id"],
    )


def save_optimizer(prefix: str | Path, optimizer: torch.optim.Optimizer) -> None:
    sd = optimizer.state_dict()
    arrays: dict[str, np.ndarray] = {}
    scalars: dict[str, float] = {}
    for pid, state in sd["state"].items():
        for key, value in state.items():
            if isinstance(value, torch.Tensor):
                arrays[f"state.{pid}.{key}"] = value.detach().cpu().numpy()
            else:
                scalars[f"state.{pid}.{key}"] = value
    meta = {"kind": "optimizer", "param_groups": sd["param_groups"], "scalars": scalars}
    save_arrays(prefix, arrays, meta)


def load_optimizer_into(prefix: str | Path, optimizer: torch.optim.Optimizer) -> None:
    arrays, meta = load_arrays(prefix)
    if meta.get("kind") != "optimizer":
        raise IntegrityError(f"{prefix}: checkpoint is not an optimizer state")
    state: dict[int, dict] = {}
    for key, arr in arrays.items():
        _, pid, name = key.split(".", 2)
        state.setdefault(int(pid), {})[name] = torch.from_numpy(arr.copy())
    for key, value in meta.get("scalars", {}).items():
        _, pid, name = key.split(".", 2)
        state.setdefault(int(pid), {})[name] = value
    groups = []
    for group in meta["param_groups"]:
        group = dict(group)
        if isinstance(group.get("betas"), list):  # JSON drops the tuple
            group["betas"] = tuple(group["betas"])
        groups.append(group)
    optimizer.load_state_dict({"state": state, "param_groups": groups})
