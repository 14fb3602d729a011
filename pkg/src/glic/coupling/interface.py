"""Index maps between the global interface layout and the models."""

from dataclasses import dataclass

import numpy as np

from glic.errors import InvalidInputError


@dataclass
class PatchMap:
    """Interface DOFs of one patch.

    ``patch_dofs[k]`` (a DOF of the patch model) matches the global interface
    entry ``positions[k]``; ``global_patch_dofs`` does the same for the
    global version of the patch when one exists.
    """

    patch_dofs: np.ndarray
    positions: np.ndarray
    global_patch_dofs: np.ndarray = None


@dataclass
class InterfaceMap:
    """``global_dofs`` realizes the global trace; each PatchMap an injection."""

    global_dofs: np.ndarray
    patches: list

    def __post_init__(self):
        self.global_dofs = np.asarray(self.global_dofs, dtype=np.int64)
        for pm in self.patches:
            pm.patch_dofs = np.asarray(pm.patch_dofs, dtype=np.int64)
            pm.positions = np.asarray(pm.positions, dtype=np.int64)
        self.validate()

    @property
    def size(self):
        return len(self.global_dofs)

    def validate(self):
        n = self.size
        if len(np.unique(self.global_dofs)) != n:
            raise InvalidInputError("global interface DOFs repeat")
        seen = np.zeros(n, dtype=int)
        for s, pm in enumerate(self.patches, start=1):
            if len(pm.patch_dofs) != len(pm.positions):
                raise InvalidInputError(f"patch {s}: trace and injection sizes differ")
            if pm.positions.size and (pm.positions.min() < 0 or pm.positions.max() >= n):
                raise InvalidInputError(f"patch {s}: injection outside the interface")
            if len(np.unique(pm.positions)) != len(pm.positions):
                raise InvalidInputError(f"patch {s}: injection is not one-to-one")
            seen[pm.positions] += 1
        if np.any(seen > 1):
            raise InvalidInputError("patch interfaces overlap")
        if np.any(seen == 0):
            raise InvalidInputError("interface DOFs not covered by any patch")

    def restrict(self, s, vec):
        """``A^s^T vec``: the part of a global-interface vector seen by patch ``s``."""
        return np.asarray(vec)[self.patches[s].positions]

    def inject(self, s, vec, out=None):
        """Add ``A^s vec`` into ``out`` (allocated when omitted)."""
        if out is None:
            out = np.zeros(self.size)
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(self.patches[s].positions),):
            raise InvalidInputError(f"patch {s}: vector does not match the patch interface")
        out[self.patches[s].positions] += vec
        return out
