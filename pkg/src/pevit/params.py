"""Named parameter store with explicit MLP aliasing."""

import numpy as np

from .autograd import Tensor

MLP_KEYS = ("fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias")


def mlp_path(storage, key):
    return f"mlps.{storage}.{key}"


class ParamSet:
    """Parameter tensors keyed by path, plus the block -> MLP storage map.

    Each entry in ``tensors`` is one storage. MLP weights live under
    ``mlps.<storage>.*`` and blocks reach them through ``sharing_map``, so
    two blocks mapped to the same storage read (and write gradients into)
    the very same :class:`Tensor`.

    ``transform`` records which variant transform produced this set
    (``None`` for a freshly initialised full-width, unshared set).
    """

    def __init__(self, tensors, sharing_map, transform=None):
        self.tensors = dict(tensors)
        self.sharing_map = dict(sharing_map)
        self.transform = transform

    def __getitem__(self, path):
        return self.tensors[path]

    def __contains__(self, path):
        return path in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def depth(self):
        return len(self.sharing_map)

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def mlp(self, block):
        s = self.sharing_map[block]
        return {k: self.tensors[mlp_path(s, k)] for k in MLP_KEYS}

    def block(self, i):
        prefix = f"blocks.{i}."
        out = {k[len(prefix):]: t for k, t in self.tensors.items() if k.startswith(prefix)}
        out.update({f"mlp.{k}": t for k, t in self.mlp(i).items()})
        return out

    def storages(self):
        return sorted(set(self.sharing_map.values()))

    @property
    def num_mlp_storages(self):
        return len(self.storages())

    def resolved(self):
        """Yield ``(path, tensor)`` for every reference, MLPs expanded per block.

        A storage shared by two blocks is yielded twice, under each
        block's path.
        """
        for path, t in self.tensors.items():
            if not path.startswith("mlps."):
                yield path, t
        for i in range(self.depth):
            for k, t in self.mlp(i).items():
                yield f"blocks.{i}.mlp.{k}", t

    def num_params(self):
        return sum(t.size for t in self.tensors.values())

    def requires_grad_(self, flag=True):
        for t in self.tensors.values():
            t.requires_grad = flag
        return self

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self, dtype=None):
        """Deep copy; aliasing structure is preserved because storages are copied once."""
        tensors = {
            k: Tensor(np.array(t.data, dtype=dtype or t.dtype), requires_grad=t.requires_grad)
            for k, t in self.tensors.items()
        }
        return ParamSet(tensors, self.sharing_map, self.transform)

    def astype(self, dtype):
        return self.copy(dtype=np.dtype(dtype))

    def arrays(self):
        return {k: t.data for k, t in self.tensors.items()}

    def __repr__(self):
        return (
            f"ParamSet({len(self.tensors)} storages, {self.num_params():,} params, "
            f"{self.num_mlp_storages} MLP storages, transform={self.transform!r})"
        )
