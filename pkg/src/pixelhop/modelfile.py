"""Binary container for trained pipelines.

Layout::

    8 bytes   magic "SSLPXH01" (the trailing digits are the format version)
    4 bytes   little-endian uint32 manifest length
    manifest  UTF-8 JSON: config, dimensions, array table, scalar metadata
    payload   little-endian float64 arrays, back to back

Every array is listed in the manifest as ``name -> [offset, shape]`` with the
offset counted in float64 elements. Integer arrays (support-vector indices,
class labels) are stored as float64, which is exact below 2**53.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .cascade import PixelHop, PixelHopUnit
from .classifier import SVC, Standardizer
from .config import from_mapping
from .exceptions import ConsistencyError, DataIOError, FormatError
from .lag import LAG
from .pipeline import PixelHopClassifier, TrainedPipeline
from .saab import Saab

MAGIC = b"SSLPXH01"
FORMAT_VERSION = 1


def write_container(path, manifest, arrays):
    table, chunks, offset = {}, [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        table[name] = [offset, list(arr.shape)]
        chunks.append(arr.tobytes())
        offset += arr.size
    manifest = {**manifest, "arrays": table}
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            for chunk in chunks:
                f.write(chunk)
    except OSError as exc:
        raise DataIOError(f"cannot write model file {path}: {exc}") from exc


def read_container(path):
    """Return ``(manifest, arrays)`` after checking magic, manifest and payload size."""
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DataIOError(f"model file not found: {path}") from exc
    except OSError as exc:
        raise DataIOError(f"cannot read model file {path}: {exc}") from exc
    if raw[:6] != MAGIC[:6]:
        raise FormatError(f"{path}: not a model file (magic {raw[:8]!r})")
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: unsupported model format version {raw[6:8]!r}")
    if len(raw) < 12:
        raise DataIOError(f"{path}: truncated header")
    (length,) = struct.unpack("<I", raw[8:12])
    try:
        manifest = json.loads(raw[12:12 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest: {exc}") from exc
    payload = np.frombuffer(raw, dtype="<f8", offset=12 + length) \
        if (len(raw) - 12 - length) % 8 == 0 else None
    if payload is None:
        raise DataIOError(f"{path}: payload is not a whole number of float64 values")
    arrays = {}
    for name, (offset, shape) in manifest.get("arrays", {}).items():
        size = int(np.prod(shape)) if shape else 1
        if offset + size > len(payload):
            raise DataIOError(f"{path}: payload truncated inside array {name!r}")
        arrays[name] = payload[offset:offset + size].reshape(shape).astype(np.float64)
    return manifest, arrays


def save_model(tp, path):
    """Serialise a :class:`TrainedPipeline`."""
    model = tp.model
    arrays = {}
    groups = []
    for g, cascade in enumerate(model.cascades_):
        units = []
        for u, unit in enumerate(cascade.units_):
            s = unit.saab
            key = f"g{g}/u{u}"
            arrays[f"{key}/dc_kernel"] = s.dc_kernel_
            arrays[f"{key}/ac_kernels"] = s.ac_kernels_
            arrays[f"{key}/feature_mean"] = s.feature_mean_
            arrays[f"{key}/eigenvalues"] = s.eigenvalues_
            arrays[f"{key}/bias"] = np.array([s.bias_])
            units.append({"stage": unit.stage, "input_spectral": unit.input_spectral,
                          "output_spectral": unit.output_spectral, "padding": unit.padding,
                          "neighbor_count": unit.neighbor_count,
                          "energy_threshold": s.energy_threshold, "n_kernels": s.n_kernels,
                          "bias_on_dc": s.bias_on_dc})
        groups.append({"channels": model.groups_[g], "spatial_sizes": cascade.spatial_sizes_,
                       "params": cascade.get_params(), "units": units})
    lags = []
    for (g, u, scheme), lag in model.lags_.items():
        key = f"lag/g{g}/u{u}/{scheme}"
        arrays[f"{key}/classes"] = lag.classes_
        arrays[f"{key}/centroids"] = lag.centroids_
        arrays[f"{key}/weights"] = lag.weights_
        arrays[f"{key}/bias"] = lag.bias_
        lags.append({"group": g, "unit": u, "scheme": scheme, "params": lag.get_params(),
                     "ridge_used": lag.ridge_used_})
    arrays["standardizer/mean"] = model.standardizer_.mean_
    arrays["standardizer/scale"] = model.standardizer_.scale_
    svc = model.svc_
    arrays["svc/classes"] = svc.classes_
    arrays["svc/support"] = svc.support_
    arrays["svc/support_vectors"] = svc.support_vectors_
    machines = []
    for m, mach in enumerate(svc.machines_):
        for name in ("sv", "coef", "alpha", "y"):
            arrays[f"svc/m{m}/{name}"] = mach[name]
        arrays[f"svc/m{m}/rho"] = np.array([mach["rho"]])
        machines.append({"pair": list(mach["pair"]), "iterations": int(mach["iterations"]),
                         "kkt_gap": float(mach["kkt_gap"])})
    n_outputs = model.lags_[model.block_keys_[0]].n_outputs_
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": tp.config.to_dict(),
        # wall-clock timings stay out so identical runs give identical files
        "info": {k: v for k, v in tp.info.items() if k != "timings"},
        "model_params": {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in model.get_params().items()},
        "image_shape": list(model.image_shape_),
        "classes": model.classes_.tolist(),
        "groups": groups,
        "lags": lags,
        "block_keys": [list(k) for k in model.block_keys_],
        "svc": {"params": svc.get_params(), "gamma": svc.gamma_, "machines": machines},
        "dims": {"groups": len(groups), "schemes": len(model.schemes), "units": model.n_units,
                 "classes": len(model.classes_), "clusters": model.n_clusters,
                 "M": int(n_outputs), "F": int(model.n_features_)},
    }
    write_container(path, manifest, arrays)


def _check_dims(manifest, model, path):
    dims = manifest["dims"]
    expected = dims["groups"] * dims["schemes"] * dims["units"] * dims["M"]
    seen = {
        "manifest F": dims["F"],
        "groups*schemes*units*M": expected,
        "standardizer": len(model.standardizer_.mean_),
        "classifier": model.svc_.support_vectors_.shape[1],
        "feature blocks": len(model.block_keys_) * dims["M"],
    }
    if len(set(seen.values())) != 1:
        raise ConsistencyError(f"{path}: inconsistent feature dimensions {seen}")
    if dims["M"] != dims["classes"] * dims["clusters"]:
        raise ConsistencyError(f"{path}: M={dims['M']} is not classes*clusters")


def load_model(path):
    """Rebuild a :class:`TrainedPipeline` written by :func:`save_model`."""
    manifest, arrays = read_container(path)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {manifest.get('format_version')}")
    try:
        return _rebuild(manifest, arrays, path)
    except KeyError as exc:
        raise ConsistencyError(f"{path}: manifest or payload lacks {exc}") from exc


def _rebuild(manifest, arrays, path):
    config = from_mapping(manifest["config"])
    params = manifest["model_params"]
    model = PixelHopClassifier(**{k: (tuple(v) if k in ("schemes", "blocks") else v)
                                  for k, v in params.items()})
    model.classes_ = np.asarray(manifest["classes"])
    model.image_shape_ = tuple(manifest["image_shape"])
    model.groups_ = [g["channels"] for g in manifest["groups"]]
    model.cascades_ = []
    for g, group in enumerate(manifest["groups"]):
        cascade = PixelHop(**group["params"])
        cascade.spatial_sizes_ = list(group["spatial_sizes"])
        cascade.units_ = []
        for u, meta in enumerate(group["units"]):
            key = f"g{g}/u{u}"
            saab = Saab(energy_threshold=meta["energy_threshold"], n_kernels=meta["n_kernels"],
                        bias_on_dc=meta["bias_on_dc"])
            saab.dc_kernel_ = arrays[f"{key}/dc_kernel"]
            saab.ac_kernels_ = arrays[f"{key}/ac_kernels"].reshape(-1, len(saab.dc_kernel_))
            saab.feature_mean_ = arrays[f"{key}/feature_mean"]
            saab.eigenvalues_ = arrays[f"{key}/eigenvalues"]
            saab.bias_ = float(arrays[f"{key}/bias"][0])
            saab.n_features_in_ = len(saab.dc_kernel_)
            unit = PixelHopUnit(stage=meta["stage"], input_spectral=meta["input_spectral"],
                                saab=saab, padding=meta["padding"],
                                neighbor_count=meta["neighbor_count"])
            if unit.concat_dim != saab.n_features_in_ or unit.output_spectral != meta["output_spectral"]:
                raise ConsistencyError(f"{path}: group {g} unit {u + 1} dimensions disagree")
            if u and unit.input_spectral != cascade.units_[-1].output_spectral:
                raise ConsistencyError(f"{path}: group {g} unit {u + 1} input channels disagree")
            cascade.units_.append(unit)
        model.cascades_.append(cascade)
    model.lags_ = {}
    for meta in manifest["lags"]:
        key = f"lag/g{meta['group']}/u{meta['unit']}/{meta['scheme']}"
        lag = LAG(**meta["params"])
        lag.classes_ = arrays[f"{key}/classes"].astype(np.int64)
        lag.centroids_ = arrays[f"{key}/centroids"]
        lag.weights_ = arrays[f"{key}/weights"]
        lag.bias_ = arrays[f"{key}/bias"]
        lag.n_features_in_ = lag.weights_.shape[1]
        lag.ridge_used_ = meta["ridge_used"]
        model.lags_[(meta["group"], meta["unit"], meta["scheme"])] = lag
    model.block_keys_ = [tuple(k) for k in manifest["block_keys"]]
    std = Standardizer()
    std.mean_ = arrays["standardizer/mean"]
    std.scale_ = arrays["standardizer/scale"]
    std.n_features_in_ = len(std.mean_)
    model.standardizer_ = std
    svc = SVC(**manifest["svc"]["params"])
    svc.gamma_ = manifest["svc"]["gamma"]
    svc.classes_ = arrays["svc/classes"].astype(np.int64)
    svc.support_ = arrays["svc/support"].astype(np.int64)
    svc.support_vectors_ = arrays["svc/support_vectors"].reshape(len(svc.support_), -1)
    svc.n_features_in_ = svc.support_vectors_.shape[1]
    svc.machines_ = []
    for m, meta in enumerate(manifest["svc"]["machines"]):
        mach = {name: arrays[f"svc/m{m}/{name}"] for name in ("coef", "alpha", "y")}
        mach["sv"] = arrays[f"svc/m{m}/sv"].astype(np.int64)
        mach["rho"] = float(arrays[f"svc/m{m}/rho"][0])
        mach["pair"] = tuple(meta["pair"])
        mach["iterations"] = meta["iterations"]
        mach["kkt_gap"] = meta["kkt_gap"]
        svc.machines_.append(mach)
    model.svc_ = svc
    model.timings_ = {}
    model.n_features_out_ = svc.n_features_in_
    _check_dims(manifest, model, path)
    return TrainedPipeline(config, model, manifest.get("info", {}))
