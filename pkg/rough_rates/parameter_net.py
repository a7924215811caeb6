"""
A persistent graph of the exponents behind the distance estimates.

Inputs carry a validated value; derived parameters are formulas of other parameters. A
:class:`ParameterState` never changes: :meth:`ParameterState.update` returns a new state in which
exactly the formulas downstream of the changed inputs were re-evaluated, together with the names
of every value that moved. States share structure through pyrsistent containers, so keeping one
per experiment variant is cheap.
"""

import logging
import math
from collections.abc import Callable, Mapping, Sequence
from typing import Any

from pyrsistent import pmap, pvector
from pyrsistent.typing import PMap, PVector

LOGGER = logging.getLogger(__name__)

FLOAT_TOLERANCE = 1e-12


def values_equal(first: Any, second: Any) -> bool:
    """Floats compare with a relative tolerance so that re-deriving an exponent is not a change."""
    if isinstance(first, float) and isinstance(second, float):
        return math.isclose(first, second, rel_tol=FLOAT_TOLERANCE, abs_tol=FLOAT_TOLERANCE)
    return bool(first == second)


class ParameterNode:
    def __init__(self, name: str) -> None:
        if not name:
            raise ValueError("A parameter needs a name")
        self._name = name

    @property
    def name(self) -> str:
        return self._name

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self._name!r})"


class ParameterInput(ParameterNode):
    def validate(self, value: Any) -> Any:
        """Checks a value before it is set; subclasses coerce it or raise ``ValueError``."""
        return value


class DerivedParameter(ParameterNode):
    """``formula`` is called with the dependency values in dependency order."""

    def __init__(
        self, name: str, formula: Callable[..., Any], dependencies: Sequence[ParameterNode]
    ) -> None:
        super().__init__(name)
        self._formula = formula
        self._dependencies = tuple(dependencies)

    @property
    def dependencies(self) -> tuple[ParameterNode, ...]:
        return self._dependencies

    def evaluate(self, values: Mapping[str, Any]) -> Any:
        return self._formula(*(values[dependency.name] for dependency in self._dependencies))


class ParameterState:
    def __init__(self, nodes: PVector[ParameterNode], values: PMap[str, Any]) -> None:
        self._nodes = nodes
        self._values = values

    @property
    def names(self) -> list[str]:
        return [node.name for node in self._nodes]

    def node(self, name: str) -> ParameterNode:
        for node in self._nodes:
            if node.name == name:
                return node
        raise KeyError(f"No parameter named {name!r}")

    def value(self, name: str) -> Any:
        if name not in self._values:
            raise KeyError(f"No parameter named {name!r}")
        return self._values[name]

    def update(self, inputs: Mapping[str, Any]) -> tuple["ParameterState", frozenset[str]]:
        """Sets inputs by name and re-evaluates what depends on them."""
        values = self._values
        changed: set[str] = set()
        for name, value in inputs.items():
            node = self.node(name)
            if not isinstance(node, ParameterInput):
                raise ValueError(f"{name} is derived and cannot be set")
            value = node.validate(value)
            if not values_equal(values[name], value):
                values = values.set(name, value)
                changed.add(name)
        if not changed:
            return self, frozenset()
        # nodes are stored in dependency order
        for node in self._nodes:
            if not isinstance(node, DerivedParameter):
                continue
            if changed.isdisjoint(dependency.name for dependency in node.dependencies):
                continue
            value = node.evaluate(values)
            if not values_equal(values[node.name], value):
                values = values.set(node.name, value)
                changed.add(node.name)
        LOGGER.debug("Updated %s, changed: %s", sorted(inputs), sorted(changed))
        return ParameterState(self._nodes, values), frozenset(changed)

    def dump(self) -> dict[str, Any]:
        return {node.name: self._values[node.name] for node in self._nodes}

    def __repr__(self) -> str:
        body = ", ".join(f"{name}: {value}" for name, value in self.dump().items())
        return f"ParameterState({body})"


class ParameterNetBuilder:
    def __init__(self) -> None:
        self._nodes: list[ParameterNode] = []
        self._initial: dict[str, Any] = {}

    def add_input(self, node: ParameterInput, value: Any) -> ParameterInput:
        self._register(node)
        self._initial[node.name] = node.validate(value)
        return node

    def add_derived(self, node: DerivedParameter) -> DerivedParameter:
        self._register(node)
        return node

    def _register(self, node: ParameterNode) -> None:
        if any(known.name == node.name for known in self._nodes):
            raise ValueError(f"Duplicate parameter name {node.name!r}")
        self._nodes.append(node)

    def _sorted_nodes(self) -> list[ParameterNode]:
        ordered: list[ParameterNode] = []
        done: set[str] = set()
        active: set[str] = set()

        def visit(node: ParameterNode) -> None:
            if node.name in active:
                raise ValueError(f"Circular dependency through {node.name}")
            if node.name in done:
                return
            active.add(node.name)
            if isinstance(node, DerivedParameter):
                for dependency in node.dependencies:
                    visit(dependency)
            active.remove(node.name)
            done.add(node.name)
            ordered.append(node)

        for node in self._nodes:
            visit(node)
        return ordered

    def build(self) -> ParameterState:
        nodes = self._sorted_nodes()
        values = dict(self._initial)
        for node in nodes:
            if isinstance(node, DerivedParameter):
                values[node.name] = node.evaluate(values)
            elif node.name not in values:
                raise ValueError(f"Input {node.name} was never added with a value")
        return ParameterState(pvector(nodes), pmap(values))
