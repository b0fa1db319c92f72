"""JSON model specs: validation, desugaring and model construction.

A spec document looks like::

    {
      "seed": 7,
      "layers": [
        {"type": "Dense", "units": 4, "input_dim": 2, "activation": "relu"},
        {"type": "Dense", "units": 1, "activation": "sigmoid"}
      ],
      "compile": {"loss": "binary_crossentropy",
                  "optimizer": {"type": "SGD", "lr": 0.5},
                  "metrics": ["accuracy"]},
      "fit": {"batch_size": 4, "epochs": 2000}
    }

Dense and Conv2D layers with an ``activation`` field are expanded into the
layer followed by a separate Activation layer (``linear`` when omitted).
"""

from __future__ import annotations

import copy
import json
from typing import Any, Optional

from jsonschema import Draft202012Validator

from .. import objectives
from ..engine import Model, TrainConfig
from ..errors import ShapeError, SchemaError, ShapeInconsistencyError, UnsupportedLayerError
from ..layers import ACTIVATIONS, Activation, Conv2D, Dense, Dropout, Flatten, MaxPool2D

UNSUPPORTED_LAYERS = (
    "BatchNormalization", "ZeroPadding2D", "Padding", "LSTM", "GRU", "SimpleRNN",
    "Conv3D", "ConvLSTM2D", "Embedding",
)

_INITIALIZER = {
    "anyOf": [
        {"type": "string", "enum": sorted(objectives.INITIALIZERS)},
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": sorted(objectives.INITIALIZERS)},
                "stddev": {"type": "number", "minimum": 0},
                "mean": {"type": "number"},
            },
        },
    ]
}
_POS_INT = {"type": "integer", "minimum": 1}
_PAIR = {"anyOf": [_POS_INT, {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 2}]}
_SHAPE = {"type": "array", "items": _POS_INT, "minItems": 1, "maxItems": 3}
_ACT = {"enum": list(ACTIVATIONS)}
_COMMON = {"type": {"type": "string"}, "name": {"type": "string"}, "input_shape": _SHAPE}

LAYER_SCHEMAS = {
    "Dense": {
        "required": ["units"],
        "properties": {
            **_COMMON,
            "units": _POS_INT,
            "input_dim": _POS_INT,
            "activation": _ACT,
            "kernel_initializer": _INITIALIZER,
            "bias_initializer": _INITIALIZER,
        },
    },
    "Conv2D": {
        "required": ["filters", "kernel_size"],
        "properties": {
            **_COMMON,
            "filters": _POS_INT,
            "kernel_size": _PAIR,
            "strides": _POS_INT,
            "padding": {"enum": ["valid", "same"]},
            "activation": _ACT,
            "kernel_initializer": _INITIALIZER,
            "bias_initializer": _INITIALIZER,
        },
    },
    "MaxPooling2D": {
        "properties": {**_COMMON, "pool_size": _PAIR, "pool": _PAIR, "strides": _POS_INT},
    },
    "Flatten": {"properties": dict(_COMMON)},
    "Dropout": {
        "required": ["rate"],
        "properties": {**_COMMON, "rate": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
    },
    "Activation": {"required": ["activation"], "properties": {**_COMMON, "activation": _ACT}},
}
LAYER_ALIASES = {"MaxPool2D": "MaxPooling2D"}

TOP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["layers", "compile", "fit"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "layers": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "object", "required": ["type"], "properties": {"type": {"type": "string"}}},
        },
        "compile": {
            "type": "object",
            "additionalProperties": False,
            "required": ["loss", "optimizer"],
            "properties": {
                "loss": {"enum": list(objectives.LOSSES) + sorted(objectives.LOSS_ALIASES)},
                "optimizer": {
                    "anyOf": [
                        {"enum": ["SGD", "Adam", "sgd", "adam"]},
                        {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["type"],
                            "properties": {
                                "type": {"enum": ["SGD", "Adam", "sgd", "adam"]},
                                "lr": {"type": "number", "minimum": 0},
                                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                                "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                                "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                            },
                        },
                    ]
                },
                "metrics": {"type": "array", "items": {"enum": ["accuracy"]}},
            },
        },
        "fit": {
            "type": "object",
            "additionalProperties": False,
            "required": ["batch_size", "epochs"],
            "properties": {
                "batch_size": _POS_INT,
                "epochs": _POS_INT,
                "shuffle": {"type": "boolean"},
                "input_scale": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


def _pointer(parts) -> str:
    out = ""
    for p in parts:
        out += "/" + str(p).replace("~", "~0").replace("/", "~1")
    return out


def _validate(schema: dict, doc: Any, prefix: tuple = ()) -> None:
    validator = Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise SchemaError(err.message, _pointer(prefix + tuple(err.absolute_path)))


def layer_type(entry: dict) -> str:
    return LAYER_ALIASES.get(entry["type"], entry["type"])


def validate_model_spec(doc: Any) -> None:
    """Raise a :class:`~dnnfault.errors.SpecError` subclass for the first problem found."""
    _validate(TOP_SCHEMA, doc)
    for i, entry in enumerate(doc["layers"]):
        kind = layer_type(entry)
        if kind not in LAYER_SCHEMAS:
            supported = ", ".join(sorted(LAYER_SCHEMAS) + sorted(LAYER_ALIASES))
            raise UnsupportedLayerError(
                f"layer type {entry['type']!r} is not supported; supported types: {supported}; "
                f"known unsupported: {', '.join(UNSUPPORTED_LAYERS)}",
                _pointer(("layers", i, "type")),
            )
        schema = {"type": "object", "additionalProperties": False, **LAYER_SCHEMAS[kind]}
        _validate(schema, entry, ("layers", i))
    first = doc["layers"][0]
    if "input_dim" not in first and "input_shape" not in first:
        raise SchemaError("the first layer must declare input_dim or input_shape", "/layers/0")


def _initializer(spec) -> Any:
    if spec is None:
        return None
    if isinstance(spec, str):
        return objectives.INITIALIZERS[spec]()
    kwargs = {k: v for k, v in spec.items() if k != "type"}
    return objectives.INITIALIZERS[spec["type"]](**kwargs)


def _optimizer(spec) -> Any:
    if isinstance(spec, str):
        return objectives.make_optimizer(spec)
    kwargs = {}
    if "lr" in spec:
        kwargs["lr"] = float(spec["lr"])
    if "momentum" in spec:
        kwargs["momentum"] = float(spec["momentum"])
    for key, name in (("beta1", "beta1"), ("beta2", "beta2"), ("epsilon", "eps")):
        if key in spec:
            kwargs[name] = float(spec[key])
    return objectives.make_optimizer(spec["type"], **kwargs)


def infer_task(doc: dict) -> str:
    metrics = doc["compile"].get("metrics", [])
    if "accuracy" not in metrics:
        return "none"
    loss = objectives.canonical_loss(doc["compile"]["loss"])
    if loss == "binary_crossentropy":
        return "binary"
    if loss == "categorical_crossentropy":
        return "categorical"
    last = [e for e in doc["layers"] if layer_type(e) in ("Dense", "Conv2D")][-1]
    units = last.get("units", last.get("filters", 1))
    return "binary" if units == 1 else "categorical"


def input_shape_of(doc: dict) -> tuple:
    first = doc["layers"][0]
    if "input_shape" in first:
        return tuple(first["input_shape"])
    return (first["input_dim"],)


def _build_layers(doc: dict) -> tuple[list, list]:
    """Desugared layer objects plus, for each, the index of the document entry it came from."""
    layers, origin = [], []
    for i, entry in enumerate(doc["layers"]):
        kind = layer_type(entry)
        if kind == "Dense":
            layer = Dense(entry["units"], entry.get("input_dim"),
                          _initializer(entry.get("kernel_initializer")), _initializer(entry.get("bias_initializer")))
        elif kind == "Conv2D":
            layer = Conv2D(entry["filters"], entry["kernel_size"], entry.get("strides", 1),
                           entry.get("padding", "valid"),
                           _initializer(entry.get("kernel_initializer")), _initializer(entry.get("bias_initializer")))
        elif kind == "MaxPooling2D":
            pool = entry.get("pool_size", entry.get("pool", 2))
            layer = MaxPool2D(pool, entry.get("strides"))
        elif kind == "Flatten":
            layer = Flatten()
        elif kind == "Dropout":
            layer = Dropout(entry["rate"])
        else:
            layer = Activation(entry["activation"])
        layers.append(layer)
        origin.append(i)
        if kind in ("Dense", "Conv2D"):
            layers.append(Activation(entry.get("activation", "linear")))
            origin.append(i)
    return layers, origin


def parse_model_spec(doc: Any, seed: Optional[int] = None) -> tuple[Model, TrainConfig]:
    """Validate ``doc`` and build an initialised model plus its training configuration.

    ``seed`` overrides the document's own seed (default 0).
    """
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}", "") from None
    validate_model_spec(doc)
    seed = doc.get("seed", 0) if seed is None else seed
    layers, origin = _build_layers(doc)
    in_shape = input_shape_of(doc)
    # Later layers may restate their input shape; it has to agree with the chain.
    shape = in_shape
    Model(layers, "mse", None, "none", in_shape).assign_user_indices()
    checked = set()
    for layer, i in zip(layers, origin):
        entry = doc["layers"][i]
        if i not in checked and i > 0 and "input_shape" in entry and tuple(entry["input_shape"]) != tuple(shape):
            raise ShapeInconsistencyError(
                f"declared input_shape {entry['input_shape']} but the previous layer produces {list(shape)}",
                _pointer(("layers", i, "input_shape")),
            )
        checked.add(i)
        try:
            shape = layer.output_shape(shape)
        except ShapeError as exc:
            raise ShapeInconsistencyError(str(exc), _pointer(("layers", i))) from None
    model = Model.build(layers, in_shape, doc["compile"]["loss"], _optimizer(doc["compile"]["optimizer"]),
                        infer_task(doc), seed)
    fit = doc["fit"]
    config = TrainConfig(batch_size=fit["batch_size"], epochs=fit["epochs"], shuffle=fit.get("shuffle", False),
                         seed=seed, input_scale=float(fit.get("input_scale", 1.0)))
    return model, config


def serialize(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_spec(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path} is not valid JSON: {exc}", "") from None


def clone(doc: dict) -> dict:
    return copy.deepcopy(doc)
