"""JSON envelope for trained ensembles; arrays stored as base64 little-endian float64."""

import base64
import json
from pathlib import Path

import numpy as np

from .data import Schema, binary_columns
from .dbn import AbstractionChain
from .ensemble import EnsembleModel, format_p, parse_p
from .rbm import MvRbm

FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


def encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(obj: dict) -> np.ndarray:
    shape = tuple(int(s) for s in obj["shape"])
    raw = base64.b64decode(obj["data"].encode("ascii"), validate=True)
    arr = np.frombuffer(raw, dtype="<f8")
    if arr.size != int(np.prod(shape)):
        raise ModelFileError(f"array data has {arr.size} values, shape {shape} needs {int(np.prod(shape))}")
    return arr.reshape(shape).astype(np.float64)


def _rbm_to_json(m: MvRbm) -> dict:
    return {"a": encode_array(m.a), "b": encode_array(m.b), "W": encode_array(m.W)}


def _rbm_from_json(kinds, obj) -> MvRbm:
    return MvRbm(kinds, decode_array(obj["a"]), decode_array(obj["b"]), decode_array(obj["W"]))


def model_to_json(model: EnsembleModel, extra: dict = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "schema": model.schema.to_json(),
        "depth": model.depth,
        "abstraction_sizes": model.abstraction_sizes,
        "detection_sizes": model.detection_sizes,
        "p": format_p(model.p),
        "abstraction": [_rbm_to_json(m) for m in model.chain],
        "detectors": [_rbm_to_json(m) for m in model.detectors],
    }
    if extra:
        doc["run"] = extra
    return doc


def model_from_json(doc: dict) -> EnsembleModel:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format_version {version!r}; this build reads version {FORMAT_VERSION}")
    try:
        schema = Schema.from_json(doc["schema"])
        depth = int(doc["depth"])
        ka = [int(k) for k in doc["abstraction_sizes"]]
        if len(doc["abstraction"]) != depth - 1 or len(doc["detectors"]) != depth:
            raise ModelFileError("layer counts do not match declared depth")
        chain = AbstractionChain()
        kinds = tuple(schema)
        for l, obj in enumerate(doc["abstraction"]):
            chain = chain.append(_rbm_from_json(kinds, obj))
            kinds = binary_columns(ka[l])
        detectors = [_rbm_from_json(tuple(schema), doc["detectors"][0])]
        for l in range(1, depth):
            detectors.append(_rbm_from_json(binary_columns(ka[l - 1]), doc["detectors"][l]))
        model = EnsembleModel(schema, chain, tuple(detectors), parse_p(doc["p"]))
    except (KeyError, TypeError) as exc:
        raise ModelFileError(f"malformed model file: {exc!r}") from None
    if model.detection_sizes != [int(k) for k in doc["detection_sizes"]] or model.abstraction_sizes != ka:
        raise ModelFileError("declared layer sizes do not match stored parameters")
    return model


def dumps(model: EnsembleModel, extra: dict = None) -> str:
    return json.dumps(model_to_json(model, extra), indent=1, sort_keys=True) + "\n"


def save_model(model: EnsembleModel, path, extra: dict = None) -> None:
    Path(path).write_text(dumps(model, extra), encoding="utf-8")


def load_model(path) -> EnsembleModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not a JSON model file ({exc})") from None
    if not isinstance(doc, dict):
        raise ModelFileError(f"{path}: not a JSON model file")
    return model_from_json(doc)


def load_run_info(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8")).get("run", {})
