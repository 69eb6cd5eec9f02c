from contextlib import contextmanager
from contextvars import ContextVar
from typing import Iterator, Optional, Tuple

import numpy as np

from dpc.errors import ContractViolation

_default_dtype: ContextVar[np.dtype] = ContextVar("dpc_default_dtype", default=np.dtype(np.float32))


def get_default_dtype() -> np.dtype:
    return _default_dtype.get()


@contextmanager
def precision(dtype) -> Iterator[np.dtype]:
    """Run a block with a different default floating-point width.

    Training runs in float32; gradient verification wraps model construction
    and the checked function in ``precision("float64")``.
    """
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {dtype}")
    token = _default_dtype.set(dtype)
    try:
        yield dtype
    finally:
        _default_dtype.reset(token)


class Tensor:
    """Dense row-major array plus the bookkeeping the tape needs."""

    __slots__ = ("data", "requires_grad", "name", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=get_default_dtype())
        self.requires_grad = requires_grad
        self.name = name
        self._node = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = False
        out.name = None
        out._node = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"{type(self).__name__}(shape={self.shape}, dtype={self.dtype}{label})"

    # Operator sugar; the op module imports this one, hence the late imports.
    def __add__(self, other):
        from dpc.graph import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from dpc.graph import ops
        return ops.add(self, ops.scale(ops.as_tensor(other), -1.0))

    def __mul__(self, other):
        from dpc.graph import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from dpc.graph import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from dpc.graph import ops
        return ops.matmul(self, other)


class Parameter(Tensor):
    """A named leaf tensor. Only trainable parameters ever hold a gradient."""

    __slots__ = ("grad", "trainable")

    def __init__(self, data, trainable: bool = True, name: Optional[str] = None):
        super().__init__(data, requires_grad=trainable, name=name)
        self.trainable = trainable
        self.grad: Optional[np.ndarray] = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if not self.trainable:
            return
        if grad.shape != self.data.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match parameter {self.name} {self.data.shape}")
        grad = np.array(grad, dtype=self.data.dtype)
        self.grad = grad if self.grad is None else self.grad + grad

    def zero_grad(self) -> None:
        self.grad = None

    def freeze(self) -> "Parameter":
        self.trainable = False
        self.requires_grad = False
        self.grad = None
        return self
