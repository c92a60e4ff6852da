"""Segmentation problems over a label hierarchy and their energy.

A labeling is stored as one array of shape ``(len(hierarchy), *dims)``
indexed by label id. The root row is always one. Partial labelings
(mappings from label name or id to a field) are completed by summing
children into their parents, which is how leaf-only labelings from the
oracle or from files get branch values.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .fields import GridGeometry, gradient, norm
from .hierarchy import Hierarchy, postorder


class GeometryMismatch(ValueError):
    pass


FieldLike = Union[np.ndarray, float, int]
LabelingLike = Union[np.ndarray, Mapping]


@dataclass(frozen=True)
class GhmfProblem:
    hierarchy: Hierarchy
    geometry: GridGeometry
    data_terms: tuple[Optional[np.ndarray], ...]
    smoothness_terms: tuple[np.ndarray, ...]
    # constant added by data normalization; original energy = energy + offset
    energy_offset: float = 0.0

    def __post_init__(self):
        n = len(self.hierarchy)
        if len(self.data_terms) != n or len(self.smoothness_terms) != n:
            raise GeometryMismatch(f"expected {n} data and smoothness terms")
        dims = self.geometry.dims
        data = []
        for i, d in enumerate(self.data_terms):
            if d is None:
                data.append(None)
                continue
            d = np.asarray(d, dtype=np.float64)
            if d.shape != dims:
                raise GeometryMismatch(f"data term of {self.hierarchy.name(i)!r} has shape {d.shape}, grid is {dims}")
            if not np.all(np.isfinite(d)):
                raise ValueError(f"data term of {self.hierarchy.name(i)!r} is not finite")
            data.append(d)
        smooth = []
        for i, s in enumerate(self.smoothness_terms):
            s = np.asarray(s, dtype=np.float64)
            if s.shape != dims:
                raise GeometryMismatch(f"smoothness term of {self.hierarchy.name(i)!r} has shape {s.shape}, grid is {dims}")
            if not np.all(np.isfinite(s)) or np.any(s < 0):
                raise ValueError(f"smoothness term of {self.hierarchy.name(i)!r} must be finite and non-negative")
            smooth.append(s)
        object.__setattr__(self, "data_terms", tuple(data))
        object.__setattr__(self, "smoothness_terms", tuple(smooth))

    @classmethod
    def from_terms(
        cls,
        hierarchy: Hierarchy,
        dims: Union[GridGeometry, Sequence[int]],
        data: Optional[Mapping[str, FieldLike]] = None,
        smooth: Optional[Mapping[str, FieldLike]] = None,
    ) -> "GhmfProblem":
        """Build a problem from name-keyed terms; scalars broadcast over the grid."""
        geom = dims if isinstance(dims, GridGeometry) else GridGeometry(tuple(dims))
        data = dict(data or {})
        smooth = dict(smooth or {})
        for name in list(data) + list(smooth):
            hierarchy.id(name)  # KeyError for unknown names
        def spread(name, value):
            try:
                return np.broadcast_to(np.asarray(value, float), geom.dims).copy()
            except ValueError:
                raise GeometryMismatch(f"term of {name!r} has shape {np.shape(value)}, grid is {geom.dims}") from None

        d_terms = [spread(n, data[n]) if n in data else None for n in hierarchy.names]
        s_terms = [spread(n, smooth.get(n, 0.0)) for n in hierarchy.names]
        return cls(hierarchy, geom, tuple(d_terms), tuple(s_terms))

    def data(self, label: int) -> np.ndarray:
        """Data term of ``label``, zeros when absent."""
        d = self.data_terms[label]
        return np.zeros(self.geometry.dims) if d is None else d

    def data_stack(self) -> np.ndarray:
        return np.stack([self.data(i) for i in range(len(self.hierarchy))])

    def smooth_stack(self) -> np.ndarray:
        s = np.stack(self.smoothness_terms)
        s[self.hierarchy.root] = 0.0
        return s

    @property
    def is_normalized(self) -> bool:
        """Data terms present only on leaves and non-negative everywhere."""
        h = self.hierarchy
        for i, d in enumerate(self.data_terms):
            if d is None:
                continue
            if not h.is_leaf(i) and np.any(d != 0):
                return False
            if np.any(d < 0):
                return False
        return True

    def with_data(self, data_terms: Sequence[Optional[np.ndarray]], energy_offset: float) -> "GhmfProblem":
        return replace(self, data_terms=tuple(data_terms), energy_offset=energy_offset)


def complete_labeling(problem: GhmfProblem, u: LabelingLike) -> np.ndarray:
    """Return a full ``(labels, *dims)`` labeling array.

    ``u`` is either a full array (returned as float64, root row forced to
    one) or a mapping keyed by label name or id. Branch labels missing from
    the mapping are synthesized bottom-up as the sum of their children.
    """
    h = problem.hierarchy
    dims = problem.geometry.dims
    if not isinstance(u, Mapping):
        arr = np.array(u, dtype=np.float64)
        if arr.shape != (len(h),) + dims:
            raise GeometryMismatch(f"labeling has shape {arr.shape}, expected {(len(h),) + dims}")
        arr[h.root] = 1.0
        return arr
    given: dict[int, np.ndarray] = {}
    for key, val in u.items():
        label = h.id(key) if isinstance(key, str) else int(key)
        val = np.asarray(val, dtype=np.float64)
        if val.shape != dims:
            raise GeometryMismatch(f"labeling of {h.name(label)!r} has shape {val.shape}, expected {dims}")
        given[label] = val
    out = np.zeros((len(h),) + dims)
    for label in postorder(h):
        if label == h.root:
            out[label] = 1.0
        elif label in given:
            out[label] = given[label]
        elif h.is_leaf(label):
            raise ValueError(f"labeling is missing leaf {h.name(label)!r}")
        else:
            out[label] = sum(out[c] for c in h.children(label))
    return out


def energy_terms(problem: GhmfProblem, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-labeling data and boundary energies for a batch of full labelings.

    ``u`` has shape ``(*batch, labels, *dims)``; the two returned arrays have
    shape ``batch``. The root contributes its data term (its labeling is one)
    and no boundary cost.
    """
    rank = problem.geometry.rank
    u = np.asarray(u, dtype=np.float64)
    spatial = tuple(range(u.ndim - rank - 1, u.ndim))
    data = np.sum(problem.data_stack() * u, axis=spatial)
    tv = np.sum(problem.smooth_stack() * norm(gradient(u, rank), rank), axis=spatial)
    return data, tv


def primal_energy(problem: GhmfProblem, u: LabelingLike) -> float:
    """Sum over labels and voxels of ``D_L u_L + S_L |grad u_L|``."""
    full = complete_labeling(problem, u)
    data, tv = energy_terms(problem, full)
    return float(data + tv)


def normalize(problem: GhmfProblem) -> GhmfProblem:
    """Move data terms to the leaves and make them non-negative.

    The returned problem records the accumulated constant in
    ``energy_offset`` so that original energies can be recovered.
    """
    from .reductions import pushdown_data

    pushed, _ = pushdown_data(problem)
    h = pushed.hierarchy
    for i, d in enumerate(pushed.data_terms):
        if d is None:
            continue
        assert h.is_leaf(i) or not np.any(d), "pushdown left data on a branch"
        assert np.all(d >= 0), "pushdown left a negative data term"
    return pushed
