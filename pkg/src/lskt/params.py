"""Named parameter storage and the on-disk array format.

Arrays are written as one ``index.json`` (name, shape, dtype tag, file) plus a
flat little-endian float64 blob per array.  The same format backs parameters,
optimizer moments and the learning-state pool.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import ContractError, DimensionError

DTYPE_TAG = "float64-le"


class ParameterStore:
    """Ordered mapping name -> trainable :class:`Tensor`."""

    def __init__(self, seed=None):
        self.seed = seed
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ContractError(f"parameter {name!r} already exists")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def uniform(self, name, shape, rng, fan_in=None) -> Tensor:
        """Uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)]; fan_in defaults to shape[0]."""
        bound = 1.0 / math.sqrt(fan_in if fan_in is not None else shape[0])
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def zeros(self, name, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def trainable(self):
        return [(n, t) for n, t in self._params.items() if self._trainable[n]]

    def is_trainable(self, name):
        return self._trainable[name]

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        return {n: t.grad.copy() for n, t in self._params.items()}

    def size(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def save(self, directory) -> None:
        arrays = {n: t.data for n, t in self._params.items()}
        meta = {"seed": self.seed, "trainable": self._trainable}
        write_arrays(directory, arrays, meta)

    def load_into(self, directory) -> None:
        """Overwrite values from disk; shapes must match exactly."""
        arrays, _ = read_arrays(directory)
        missing = set(self._params) - set(arrays)
        if missing:
            raise DimensionError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, t in self._params.items():
            a = arrays[name]
            if a.shape != t.shape:
                raise DimensionError(
                    f"parameter {name!r}: checkpoint shape {a.shape} vs configured shape {t.shape}"
                )
            t.data = a.copy()
            t.zero_grad()


def _blob_name(name: str) -> str:
    return name.replace("/", "_") + ".f64"


def write_arrays(directory, arrays: dict, meta: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        fname = _blob_name(name)
        (directory / fname).write_bytes(arr.astype("<f8").tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "dtype": DTYPE_TAG, "file": fname})
    index = {"entries": entries, "meta": meta or {}}
    (directory / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))


def read_arrays(directory) -> tuple[dict, dict]:
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text())
    arrays = {}
    for e in index["entries"]:
        if e["dtype"] != DTYPE_TAG:
            raise ContractError(f"unsupported dtype tag {e['dtype']!r}")
        raw = np.frombuffer((directory / e["file"]).read_bytes(), dtype="<f8")
        arrays[e["name"]] = raw.astype(np.float64).reshape(e["shape"])
    return arrays, index.get("meta", {})
