import abc
import os
from typing import Callable, Iterable, List, Mapping, Type, Union

import numpy as np

from .errors import ShapeMismatch
from .mesh import Mesh

__all__ = ("NodalField", "CellField", "FieldWriter", "CsvFieldWriter", "VtkFieldWriter", "as_fields", "FLOAT_FORMAT")

FLOAT_FORMAT = "%.17g"


def _fmt(value) -> str:
    return FLOAT_FORMAT % value


class NodalField:
    """One value per mesh node."""

    __slots__ = ("name", "values")

    def __init__(self, name: str, values):
        self.name = name
        self.values = np.asarray(values, dtype=float).reshape(-1)

    def check(self, mesh: Mesh):
        if len(self.values) != mesh.num_nodes:
            raise ShapeMismatch(f"Field {self.name!r} has {len(self.values)} values for {mesh.num_nodes} nodes.")


class CellField(NodalField):
    """One value per triangle."""

    __slots__ = ()

    def check(self, mesh: Mesh):
        if len(self.values) != mesh.num_triangles:
            raise ShapeMismatch(
                f"Field {self.name!r} has {len(self.values)} values for {mesh.num_triangles} triangles."
            )


AnyField = Union[NodalField, CellField]


def as_fields(mesh: Mesh, fields: Union[Mapping[str, np.ndarray], Iterable[AnyField]]) -> List[AnyField]:
    """
    Normalizes ``{name: values}`` into field objects: arrays with one value per node are nodal, arrays with one value
    per triangle are cell fields.
    """
    if not isinstance(fields, Mapping):
        return list(fields)
    out = []
    for name, values in fields.items():
        values = np.asarray(values).reshape(-1)
        per_cell = len(values) == mesh.num_triangles != mesh.num_nodes
        out.append(CellField(name, values) if per_cell else NodalField(name, values))
    return out


class FieldWriter(abc.ABC):
    """
    ABC for writers of named fields on a mesh.
    Children implement the ``_write_*`` methods for each kind of field; the header and footer hooks are optional.
    """

    extension = None

    def __init__(self):
        self._kinds: Mapping[Type[AnyField], Callable[[Mesh, List[AnyField]], List[str]]] = {
            NodalField: self._write_nodal,
            CellField: self._write_cells,
        }

    def write(self, mesh: Mesh, fields, path) -> str:
        """
        Writes the fields to ``path`` (the extension is added if missing) and returns the path written.

        :param Mesh mesh: The mesh the fields live on.
        :param fields: ``{name: values}`` or a sequence of :class:`NodalField` / :class:`CellField`.
        """
        fields = as_fields(mesh, fields)
        for field in fields:
            field.check(mesh)
        if self.extension and not str(path).endswith(self.extension):
            path = f"{path}{self.extension}"
        lines = self._header(mesh)
        for kind, handler in self._kinds.items():
            group = [f for f in fields if type(f) is kind]
            lines.extend(handler(mesh, group))
        directory = os.path.dirname(str(path))
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
        return str(path)

    def _header(self, mesh: Mesh) -> List[str]:
        return []

    def _write_nodal(self, mesh: Mesh, fields: List[NodalField]) -> List[str]:
        raise NotImplementedError

    def _write_cells(self, mesh: Mesh, fields: List[CellField]) -> List[str]:
        raise NotImplementedError


class CsvFieldWriter(FieldWriter):
    """
    Nodal fields as ``node_id,x,y,<name>...`` rows. Cell fields follow in a second table
    ``triangle_id,a,b,c,<name>...`` after a blank line.
    """

    extension = ".csv"

    def _write_nodal(self, mesh, fields):
        lines = [",".join(["node_id", "x", "y"] + [f.name for f in fields])]
        for i, (x, y) in enumerate(mesh.nodes):
            lines.append(",".join([str(i), _fmt(x), _fmt(y)] + [_fmt(f.values[i]) for f in fields]))
        return lines

    def _write_cells(self, mesh, fields):
        if not fields:
            return []
        lines = ["", ",".join(["triangle_id", "a", "b", "c"] + [f.name for f in fields])]
        for t, tri in enumerate(mesh.triangles):
            lines.append(",".join([str(t)] + [str(v) for v in tri] + [_fmt(f.values[t]) for f in fields]))
        return lines


class VtkFieldWriter(FieldWriter):
    """Legacy-VTK ASCII ``UNSTRUCTURED_GRID`` with one scalar per field."""

    extension = ".vtk"

    def _header(self, mesh):
        lines = ["# vtk DataFile Version 3.0", "rbfuq fields", "ASCII", "DATASET UNSTRUCTURED_GRID"]
        lines.append(f"POINTS {mesh.num_nodes} double")
        lines.extend(f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.nodes)
        lines.append(f"CELLS {mesh.num_triangles} {4 * mesh.num_triangles}")
        lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.triangles)
        lines.append(f"CELL_TYPES {mesh.num_triangles}")
        lines.extend("5" for _ in range(mesh.num_triangles))  # VTK_TRIANGLE
        return lines

    @staticmethod
    def _scalars(fields):
        lines = []
        for f in fields:
            lines.append(f"SCALARS {f.name.replace(' ', '_')} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_fmt(v) for v in f.values)
        return lines

    def _write_nodal(self, mesh, fields):
        if not fields:
            return []
        return [f"POINT_DATA {mesh.num_nodes}"] + self._scalars(fields)

    def _write_cells(self, mesh, fields):
        if not fields:
            return []
        return [f"CELL_DATA {mesh.num_triangles}"] + self._scalars(fields)
