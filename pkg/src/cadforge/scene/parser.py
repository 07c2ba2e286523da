"""Deterministic mini-interpreter for the restricted bpy dialect.

The accepted grammar: the single ``import bpy`` preamble, assignment of
numeric/tuple values to names, arithmetic with + - * /, constant-bound
``for ... in range(k)`` loops, primitive-add calls with keyword arguments,
transform attribute assignment on created objects, and the minimal
material idiom (``bpy.data.materials.new`` / ``diffuse_color`` /
``.materials.append``).  Anything outside that is either skipped with a
warning (calls and attribute writes that cannot touch units) or rejected
as Unsupported (control flow, defs, foreign imports, non-constant
bounds).  Text that is not parseable Python at all is Malformed.
"""

from __future__ import annotations

import ast

from cadforge.scene.ir import (
    ParsedScene,
    ParseMalformed,
    ParseOutcome,
    ParseUnsupported,
    SceneIR,
    Unit,
    Vec3,
    script_digest,
)

PRIMITIVE_OPS = {
    "primitive_cube_add": "Cube",
    "primitive_uv_sphere_add": "UvSphere",
    "primitive_cylinder_add": "Cylinder",
    "primitive_cone_add": "Cone",
    "primitive_torus_add": "Torus",
    "primitive_plane_add": "Plane",
}

LOOP_BOUND_CAP = 10_000
# Guards nested loops that individually respect the cap.
STATEMENT_BUDGET = 2_000_000

TRANSFORM_ATTRS = {"location": "location", "rotation_euler": "rotation_euler", "scale": "scale"}
# Creation kwargs that map onto the transform fields rather than creation_params.
TRANSFORM_KWARGS = {"location": "location", "rotation": "rotation_euler", "scale": "scale"}


class _Unsupported(Exception):
    def __init__(self, reason: str, line: int):
        super().__init__(reason)
        self.reason = reason
        self.line = line


class _EvalError(Exception):
    """Expression not evaluable in the interpreter's constant world."""


class _MaterialRef:
    __slots__ = ("rgba",)

    def __init__(self) -> None:
        self.rgba: tuple[float, float, float, float] | None = None


class _UnitRef:
    __slots__ = ("unit",)

    def __init__(self, unit: Unit) -> None:
        self.unit = unit


class _Interpreter:
    def __init__(self) -> None:
        self.env: dict[str, object] = {}
        self.units: list[Unit] = []
        self.materials: dict[int, _MaterialRef] = {}
        self.unit_materials: dict[int, _MaterialRef] = {}
        self.warnings: list[str] = []
        self.last_unit: Unit | None = None
        self.steps = 0

    # ---- statements -------------------------------------------------

    def run(self, body: list[ast.stmt]) -> None:
        for stmt in body:
            self.exec_stmt(stmt)

    def exec_stmt(self, stmt: ast.stmt) -> None:
        self.steps += 1
        if self.steps > STATEMENT_BUDGET:
            raise _Unsupported("statement budget exceeded", stmt.lineno)
        if isinstance(stmt, ast.Import):
            self._exec_import(stmt)
        elif isinstance(stmt, ast.ImportFrom):
            raise _Unsupported(f"import from '{stmt.module}'", stmt.lineno)
        elif isinstance(stmt, ast.Assign):
            self._exec_assign(stmt)
        elif isinstance(stmt, ast.AugAssign):
            self._exec_aug_assign(stmt)
        elif isinstance(stmt, ast.For):
            self._exec_for(stmt)
        elif isinstance(stmt, ast.Expr):
            self._exec_expr_stmt(stmt)
        elif isinstance(stmt, ast.Pass):
            pass
        elif isinstance(stmt, ast.While):
            raise _Unsupported("while loop", stmt.lineno)
        elif isinstance(stmt, ast.If):
            raise _Unsupported("conditional", stmt.lineno)
        elif isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)):
            raise _Unsupported("function definition", stmt.lineno)
        elif isinstance(stmt, ast.ClassDef):
            raise _Unsupported("class definition", stmt.lineno)
        elif isinstance(stmt, ast.With):
            raise _Unsupported("with statement", stmt.lineno)
        elif isinstance(stmt, ast.Try):
            raise _Unsupported("try statement", stmt.lineno)
        else:
            raise _Unsupported(f"{type(stmt).__name__} statement", stmt.lineno)

    def _exec_import(self, stmt: ast.Import) -> None:
        for alias in stmt.names:
            if alias.name != "bpy" or alias.asname is not None:
                raise _Unsupported(f"import of '{alias.name}'", stmt.lineno)

    def _exec_assign(self, stmt: ast.Assign) -> None:
        if len(stmt.targets) != 1:
            self.warn(f"skipped multi-target assignment at line {stmt.lineno}")
            return
        target = stmt.targets[0]
        if isinstance(target, ast.Name):
            try:
                value = self.eval_expr(stmt.value)
            except _EvalError as exc:
                self.warn(f"skipped assignment to '{target.id}' at line {stmt.lineno}: {exc}")
                return
            self.env[target.id] = value
        elif isinstance(target, ast.Attribute):
            self._assign_attribute(target, stmt.value, stmt.lineno)
        else:
            self.warn(f"skipped assignment to unsupported target at line {stmt.lineno}")

    def _exec_aug_assign(self, stmt: ast.AugAssign) -> None:
        if not isinstance(stmt.target, ast.Name):
            self.warn(f"skipped augmented assignment at line {stmt.lineno}")
            return
        name = stmt.target.id
        if name not in self.env:
            self.warn(f"skipped augmented assignment to undefined '{name}' at line {stmt.lineno}")
            return
        try:
            operand = self.eval_expr(stmt.value)
            self.env[name] = self._binop(stmt.op, self.env[name], operand, stmt.lineno)
        except _EvalError as exc:
            self.warn(f"skipped augmented assignment to '{name}' at line {stmt.lineno}: {exc}")

    def _assign_attribute(self, target: ast.Attribute, value_node: ast.expr, line: int) -> None:
        obj = self._resolve_object(target.value)
        attr = target.attr
        if isinstance(obj, _UnitRef):
            if attr in TRANSFORM_ATTRS:
                vec = self._eval_vec3_or_warn(value_node, attr, line)
                if vec is not None:
                    self._set_transform(obj.unit, TRANSFORM_ATTRS[attr], vec, line)
                return
            if attr == "active_material":
                self._attach_material(obj.unit, value_node, line)
                return
            self.warn(f"ignored attribute '{attr}' on object at line {line}")
            return
        if isinstance(obj, _MaterialRef):
            if attr == "diffuse_color":
                rgba = self._eval_rgba_or_warn(value_node, line)
                if rgba is not None:
                    obj.rgba = rgba
                return
            self.warn(f"ignored attribute '{attr}' on material at line {line}")
            return
        self.warn(f"ignored attribute assignment '{attr}' at line {line}")

    def _exec_for(self, stmt: ast.For) -> None:
        if stmt.orelse:
            raise _Unsupported("for-else clause", stmt.lineno)
        if not isinstance(stmt.target, ast.Name):
            raise _Unsupported("non-name loop variable", stmt.lineno)
        call = stmt.iter
        if not (isinstance(call, ast.Call) and isinstance(call.func, ast.Name) and call.func.id == "range"):
            raise _Unsupported("loop over non-range iterable", stmt.lineno)
        if call.keywords or not 1 <= len(call.args) <= 3:
            raise _Unsupported("malformed range() bounds", stmt.lineno)
        bounds = []
        for arg in call.args:
            try:
                value = self.eval_expr(arg)
            except _EvalError:
                raise _Unsupported("non-constant loop bound", stmt.lineno) from None
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if not isinstance(value, int):
                raise _Unsupported("non-integer loop bound", stmt.lineno)
            bounds.append(value)
        try:
            iterations = range(*bounds)
        except ValueError:
            raise _Unsupported("zero range step", stmt.lineno) from None
        if len(iterations) > LOOP_BOUND_CAP:
            raise _Unsupported(f"loop bound exceeds {LOOP_BOUND_CAP}", stmt.lineno)
        for i in iterations:
            self.env[stmt.target.id] = i
            self.run(stmt.body)

    def _exec_expr_stmt(self, stmt: ast.Expr) -> None:
        value = stmt.value
        if isinstance(value, ast.Constant):
            return  # docstrings and stray literals
        if isinstance(value, ast.Call):
            self._exec_call(value, stmt.lineno)
            return
        self.warn(f"ignored expression statement at line {stmt.lineno}")

    # ---- calls ------------------------------------------------------

    def _exec_call(self, call: ast.Call, line: int) -> None:
        path = _dotted_path(call.func)
        if path is not None and path.startswith("bpy.ops.mesh.") and path.split(".")[-1] in PRIMITIVE_OPS:
            self._create_unit(PRIMITIVE_OPS[path.split(".")[-1]], call, line)
            return
        if isinstance(call.func, ast.Attribute) and call.func.attr == "append":
            if self._try_material_append(call, line):
                return
        label = path if path is not None else "<dynamic call>"
        self.warn(f"ignored call '{label}' at line {line}")

    def _create_unit(self, kind: str, call: ast.Call, line: int) -> None:
        unit = Unit(kind=kind)
        for arg in call.args:
            self.warn(f"ignored positional argument to {kind} add at line {line}")
            del arg
        for kw in call.keywords:
            if kw.arg is None:
                self.warn(f"ignored **kwargs in {kind} add at line {line}")
                continue
            try:
                value = self.eval_expr(kw.value)
            except _EvalError as exc:
                self.warn(f"ignored kwarg '{kw.arg}' at line {line}: {exc}")
                continue
            if kw.arg in TRANSFORM_KWARGS:
                vec = _as_vec3(value)
                if vec is None:
                    self.warn(f"ignored kwarg '{kw.arg}' at line {line}: expected a 3-vector")
                    continue
                self._set_transform(unit, TRANSFORM_KWARGS[kw.arg], vec, line)
                continue
            if isinstance(value, bool) or isinstance(value, str):
                self.warn(f"ignored non-numeric kwarg '{kw.arg}' at line {line}")
                continue
            if isinstance(value, (int, float)):
                unit.creation_params[kw.arg] = float(value)
            else:
                vec = _as_vec3(value)
                if vec is None:
                    self.warn(f"ignored kwarg '{kw.arg}' at line {line}: expected scalar or 3-vector")
                    continue
                unit.creation_params[kw.arg] = vec
        self.units.append(unit)
        self.last_unit = unit

    def _try_material_append(self, call: ast.Call, line: int) -> bool:
        """Handle ``<unit>.data.materials.append(mat)`` (and the .materials variant)."""
        func = call.func
        assert isinstance(func, ast.Attribute)
        holder = func.value
        if not (isinstance(holder, ast.Attribute) and holder.attr == "materials"):
            return False
        base = holder.value
        if isinstance(base, ast.Attribute) and base.attr == "data":
            base = base.value
        obj = self._resolve_object(base)
        if not isinstance(obj, _UnitRef):
            return False
        if len(call.args) != 1 or call.keywords:
            self.warn(f"ignored malformed materials.append at line {line}")
            return True
        try:
            mat = self.eval_expr(call.args[0])
        except _EvalError as exc:
            self.warn(f"ignored materials.append at line {line}: {exc}")
            return True
        if not isinstance(mat, _MaterialRef):
            self.warn(f"ignored materials.append of non-material at line {line}")
            return True
        self.unit_materials[id(obj.unit)] = mat
        return True

    def _attach_material(self, unit: Unit, value_node: ast.expr, line: int) -> None:
        try:
            mat = self.eval_expr(value_node)
        except _EvalError as exc:
            self.warn(f"ignored active_material assignment at line {line}: {exc}")
            return
        if not isinstance(mat, _MaterialRef):
            self.warn(f"ignored active_material assignment of non-material at line {line}")
            return
        self.unit_materials[id(unit)] = mat

    # ---- expressions ------------------------------------------------

    def eval_expr(self, node: ast.expr):
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or isinstance(node.value, (int, float, str)):
                return node.value
            raise _EvalError(f"unsupported literal {node.value!r}")
        if isinstance(node, ast.Name):
            if node.id not in self.env:
                raise _EvalError(f"undefined name '{node.id}'")
            return self.env[node.id]
        if isinstance(node, (ast.Tuple, ast.List)):
            return tuple(self._eval_number(elt) for elt in node.elts)
        if isinstance(node, ast.BinOp):
            left = self._eval_number(node.left)
            right = self._eval_number(node.right)
            return self._binop(node.op, left, right, node.lineno)
        if isinstance(node, ast.UnaryOp):
            operand = self._eval_number(node.operand)
            if isinstance(node.op, ast.USub):
                return -operand
            if isinstance(node.op, ast.UAdd):
                return operand
            raise _EvalError("unsupported unary operator")
        if isinstance(node, ast.Attribute):
            resolved = self._resolve_object(node)
            if resolved is None:
                raise _EvalError(f"unsupported attribute '{_dotted_path(node) or node.attr}'")
            return resolved
        if isinstance(node, ast.Call):
            return self._eval_call(node)
        raise _EvalError(f"unsupported expression {type(node).__name__}")

    def _eval_number(self, node: ast.expr) -> float:
        value = self.eval_expr(node)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _EvalError("expected a numeric value")
        return value

    def _binop(self, op: ast.operator, left, right, line: int):
        if isinstance(left, bool) or isinstance(right, bool):
            raise _EvalError("expected numeric operands")
        if not isinstance(left, (int, float)) or not isinstance(right, (int, float)):
            raise _EvalError("expected numeric operands")
        if isinstance(op, ast.Add):
            return left + right
        if isinstance(op, ast.Sub):
            return left - right
        if isinstance(op, ast.Mult):
            return left * right
        if isinstance(op, ast.Div):
            if right == 0:
                raise _EvalError("division by zero")
            return left / right
        raise _Unsupported(f"unsupported operator {type(op).__name__}", line)

    def _eval_call(self, call: ast.Call):
        path = _dotted_path(call.func)
        if path == "bpy.data.materials.new":
            mat = _MaterialRef()
            self.materials[id(mat)] = mat
            return mat
        raise _EvalError(f"call '{path or '<dynamic>'}' has no value here")

    def _resolve_object(self, node: ast.expr):
        """Resolve an expression to a unit/material reference, else None."""
        path = _dotted_path(node)
        if path in ("bpy.context.object", "bpy.context.active_object"):
            if self.last_unit is None:
                return None
            return _UnitRef(self.last_unit)
        if isinstance(node, ast.Name):
            value = self.env.get(node.id)
            if isinstance(value, (_UnitRef, _MaterialRef)):
                return value
        return None

    def _set_transform(self, unit: Unit, field: str, vec: Vec3, line: int) -> None:
        if field == "scale" and any(c <= 0 for c in vec):
            self.warn(f"ignored non-positive scale at line {line}")
            return
        setattr(unit, field, vec)

    def _eval_vec3_or_warn(self, node: ast.expr, attr: str, line: int) -> Vec3 | None:
        try:
            value = self.eval_expr(node)
        except _EvalError as exc:
            self.warn(f"ignored '{attr}' assignment at line {line}: {exc}")
            return None
        vec = _as_vec3(value)
        if vec is None:
            self.warn(f"ignored '{attr}' assignment at line {line}: expected a 3-vector")
        return vec

    def _eval_rgba_or_warn(self, node: ast.expr, line: int):
        try:
            value = self.eval_expr(node)
        except _EvalError as exc:
            self.warn(f"ignored diffuse_color assignment at line {line}: {exc}")
            return None
        if isinstance(value, tuple) and len(value) == 4:
            rgba = tuple(float(c) for c in value)
            if any(not 0.0 <= c <= 1.0 for c in rgba):
                self.warn(f"ignored out-of-range diffuse_color at line {line}")
                return None
            return rgba
        self.warn(f"ignored diffuse_color assignment at line {line}: expected a 4-vector")
        return None

    def warn(self, message: str) -> None:
        self.warnings.append(message)

    def finish(self, text: str) -> SceneIR:
        for unit in self.units:
            mat = self.unit_materials.get(id(unit))
            if mat is not None and mat.rgba is not None:
                unit.material = mat.rgba
        return SceneIR(units=self.units, source_digest=script_digest(text))


def _dotted_path(node: ast.expr) -> str | None:
    parts: list[str] = []
    while isinstance(node, ast.Attribute):
        parts.append(node.attr)
        node = node.value
    if isinstance(node, ast.Name):
        parts.append(node.id)
        return ".".join(reversed(parts))
    return None


def _as_vec3(value) -> Vec3 | None:
    if isinstance(value, tuple) and len(value) == 3:
        try:
            return tuple(float(c) for c in value)
        except (TypeError, ValueError):
            return None
    return None


def parse_script(text: str) -> ParseOutcome:
    """Interpret a restricted bpy script into a SceneIR.

    Pure: identical input yields an identical outcome.
    """
    try:
        tree = ast.parse(text)
    except SyntaxError as exc:
        return ParseMalformed(reason=exc.msg or "syntax error", line=exc.lineno or 0)
    except ValueError as exc:  # e.g. null bytes in source
        return ParseMalformed(reason=str(exc), line=0)
    interp = _Interpreter()
    try:
        interp.run(tree.body)
    except _Unsupported as exc:
        return ParseUnsupported(reason=exc.reason, line=exc.line)
    scene = interp.finish(text)
    return ParsedScene(scene=scene, warnings=interp.warnings)
