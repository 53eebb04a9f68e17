"""
Boolean circuits: parse, fan-in reduce, topologically sort, compile to supervision.

Text format, one statement per line (`#` starts a comment):

    INPUT x1
    CONST one 1
    g1 = XOR x1 x2
    OUTPUT g1

Input ids are bound to bit positions in declaration order. "Lowest id" in tie-breaking
means earliest declared.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import networkx as nx
import numpy as np

from .errors import SubtaskLabError
from .numerics import SeededRng
from .parity import ParityInstance, SequenceBatch, SupervisedSequence, bits_to_labels, labels_to_bits


log = logging.getLogger(__name__)


GateKind = Literal["AND", "OR", "NOT", "XOR", "CONST0", "CONST1"]
GATE_KINDS: tuple[GateKind, ...] = ("AND", "OR", "NOT", "XOR", "CONST0", "CONST1")
_ASSOCIATIVE = ("AND", "OR", "XOR")

_ID = r"[A-Za-z_][A-Za-z0-9_]*"
_INPUT_RE = re.compile(rf"^INPUT\s+({_ID})$")
_OUTPUT_RE = re.compile(rf"^OUTPUT\s+({_ID})$")
_CONST_RE = re.compile(rf"^CONST\s+({_ID})\s+([01])$")
_GATE_RE = re.compile(rf"^({_ID})\s*=\s*([A-Za-z0-9]+)((?:\s+{_ID})*)$")


class CircuitError(SubtaskLabError, ValueError):
    pass


class CircuitParseError(CircuitError):
    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Gate:
    id: str
    kind: GateKind
    refs: tuple[str, ...] = ()

    @property
    def fanin(self) -> int:
        return len(self.refs)


@dataclass(frozen=True)
class Circuit:
    inputs: tuple[str, ...]
    gates: tuple[Gate, ...]
    output: str

    @property
    def num_inputs(self) -> int:
        return len(self.inputs)

    @property
    def gate_ids(self) -> tuple[str, ...]:
        return tuple(g.id for g in self.gates)

    @property
    def max_fanin(self) -> int:
        return max((g.fanin for g in self.gates), default=0)

    def gate(self, gate_id: str) -> Gate:
        for g in self.gates:
            if g.id == gate_id:
                return g
        raise CircuitError(f"unknown gate id: {gate_id}")

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for i in self.inputs:
            g.add_node(i, kind="INPUT")
        for gate in self.gates:
            g.add_node(gate.id, kind=gate.kind)
        for gate in self.gates:
            for r in gate.refs:
                g.add_edge(r, gate.id)
        return g


def _check_arity(kind: GateKind, n_refs: int, where: str) -> None:
    if kind in ("CONST0", "CONST1") and n_refs != 0:
        raise CircuitError(f"{where}: {kind} takes no inputs, got {n_refs}")
    if kind == "NOT" and n_refs != 1:
        raise CircuitError(f"{where}: NOT takes exactly 1 input, got {n_refs}")
    if kind in _ASSOCIATIVE and n_refs < 2:
        raise CircuitError(f"{where}: {kind} needs at least 2 inputs, got {n_refs}")


def parse_circuit(text: str) -> Circuit:
    inputs: list[str] = []
    gates: list[Gate] = []
    outputs: list[tuple[int, str]] = []
    declared_at: dict[str, int] = {}

    def declare(name: str, line_no: int) -> None:
        if name in declared_at:
            raise CircuitParseError(line_no, f"duplicate id {name!r} (first declared on line {declared_at[name]})")
        declared_at[name] = line_no

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue

        if m := _INPUT_RE.match(line):
            declare(m.group(1), line_no)
            inputs.append(m.group(1))
        elif m := _OUTPUT_RE.match(line):
            outputs.append((line_no, m.group(1)))
        elif m := _CONST_RE.match(line):
            declare(m.group(1), line_no)
            gates.append(Gate(id=m.group(1), kind="CONST1" if m.group(2) == "1" else "CONST0"))
        elif m := _GATE_RE.match(line):
            gid, kind, refs_text = m.group(1), m.group(2).upper(), m.group(3)
            if kind not in GATE_KINDS:
                raise CircuitParseError(line_no, f"unknown gate kind {m.group(2)!r} (expected one of {', '.join(GATE_KINDS)})")
            refs = tuple(refs_text.split())
            try:
                _check_arity(kind, len(refs), f"gate {gid!r}")  # type: ignore[arg-type]
            except CircuitError as e:
                raise CircuitParseError(line_no, str(e)) from None
            declare(gid, line_no)
            gates.append(Gate(id=gid, kind=kind, refs=refs))  # type: ignore[arg-type]
        else:
            raise CircuitParseError(line_no, f"cannot parse statement: {line!r}")

    _validate_refs(Circuit(inputs=tuple(inputs), gates=tuple(gates), output=""), declared_at)

    if len(outputs) != 1:
        where = ", ".join(f"line {n}" for n, _ in outputs) or "none found"
        raise CircuitError(f"exactly one OUTPUT statement is required ({where})")
    output_line, output = outputs[0]
    if output not in declared_at or output in inputs:
        raise CircuitParseError(output_line, f"OUTPUT {output!r} must name a declared gate")

    return Circuit(inputs=tuple(inputs), gates=tuple(gates), output=output)


def _validate_refs(c: Circuit, declared_at: Mapping[str, int] | None = None) -> None:
    rank = {gid: i for i, gid in enumerate(c.gate_ids)}
    for g in c.gates:
        if g.id in g.refs:
            raise CircuitError(f"cycle: gate {g.id!r} refers to itself")
    known = set(c.inputs)
    for g in c.gates:
        for r in g.refs:
            if r not in known and r not in rank:
                raise CircuitError(f"gate {g.id!r} refers to undeclared id {r!r}")
            if r in rank and rank[r] > rank[g.id]:
                graph = c.graph()
                try:
                    cycle = nx.find_cycle(graph, source=g.id)
                except nx.NetworkXNoCycle:
                    line = f" (declared on line {declared_at[r]})" if declared_at else ""
                    raise CircuitError(f"gate {g.id!r} refers to {r!r} before it is declared{line}") from None
                path = " -> ".join(u for u, _ in cycle)
                raise CircuitError(f"cycle through gate {g.id!r}: {path}")
        known.add(g.id)


def load_circuit(path: str) -> Circuit:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except FileNotFoundError:
        raise CircuitError(f"Circuit file not found: {path}") from None
    return parse_circuit(text)


def format_circuit(c: Circuit) -> str:
    lines = [f"INPUT {i}" for i in c.inputs]
    for g in c.gates:
        if g.kind in ("CONST0", "CONST1"):
            lines.append(f"CONST {g.id} {1 if g.kind == 'CONST1' else 0}")
        else:
            lines.append(f"{g.id} = {g.kind} {' '.join(g.refs)}")
    lines.append(f"OUTPUT {c.output}")
    return "\n".join(lines) + "\n"


def fanin_reduce(c: Circuit) -> Circuit:
    """
    Expand every k-ary AND/OR/XOR (k > 2) into a balanced tree of binary gates.

    The root keeps the original id; the k - 2 generated gates are declared just before it.
    A circuit that is already binary is returned unchanged.
    """
    if c.max_fanin <= 2:
        return c

    taken = set(c.inputs) | set(c.gate_ids)
    out: list[Gate] = []

    for g in c.gates:
        if g.fanin <= 2:
            out.append(g)
            continue
        counter = 0

        def fresh() -> str:
            nonlocal counter
            while True:
                name = f"{g.id}__{counter}"
                counter += 1
                if name not in taken:
                    taken.add(name)
                    return name

        def build(refs: Sequence[str], root: bool) -> str:
            if len(refs) == 1:
                return refs[0]
            half = (len(refs) + 1) // 2
            left = build(refs[:half], False)
            right = build(refs[half:], False)
            gid = g.id if root else fresh()
            out.append(Gate(id=gid, kind=g.kind, refs=(left, right)))
            return gid

        build(g.refs, True)
        log.debug("Reduced %s-ary %s gate %s into %s binary gates", g.fanin, g.kind, g.id, g.fanin - 1)

    return Circuit(inputs=c.inputs, gates=tuple(out), output=c.output)


def topo_sort(c: Circuit) -> tuple[str, ...]:
    """
    Kahn order of the gates (inputs implicitly occupy the first positions).

    Ties go to the earliest-declared ready gate; the output gate is deferred while any other
    gate is ready, so a sink output always comes last.
    """
    rank = {gid: i for i, gid in enumerate(c.inputs + c.gate_ids)}
    graph = c.graph()

    def key(node: str) -> tuple[int, int]:
        return (1 if node == c.output else 0, rank[node])

    try:
        order = list(nx.lexicographical_topological_sort(graph, key=key))
    except nx.NetworkXUnfeasible:
        raise CircuitError("cycle detected in circuit graph") from None
    gate_set = set(c.gate_ids)
    return tuple(n for n in order if n in gate_set)


def eval_circuit_batch(c: Circuit, x: np.ndarray) -> dict[str, np.ndarray]:
    x = np.atleast_2d(np.asarray(x, dtype=np.int8))
    if x.shape[1] != c.num_inputs:
        raise CircuitError(f"expected {c.num_inputs} input bits, got {x.shape[1]}")
    n = x.shape[0]
    values: dict[str, np.ndarray] = {name: x[:, i] for i, name in enumerate(c.inputs)}
    by_id = {g.id: g for g in c.gates}
    for gid in topo_sort(c):
        g = by_id[gid]
        ins = [values[r] for r in g.refs]
        if g.kind == "AND":
            v = np.logical_and.reduce(ins)
        elif g.kind == "OR":
            v = np.logical_or.reduce(ins)
        elif g.kind == "XOR":
            v = np.sum(ins, axis=0) % 2
        elif g.kind == "NOT":
            v = 1 - ins[0]
        elif g.kind == "CONST1":
            v = np.ones(n)
        else:
            v = np.zeros(n)
        values[gid] = np.asarray(v, dtype=np.int8)
    return values


def eval_circuit(c: Circuit, x: Sequence[int]) -> dict[str, int]:
    if len(x) != c.num_inputs:
        raise CircuitError(f"expected {c.num_inputs} input bits, got {len(x)}")
    return {k: int(v[0]) for k, v in eval_circuit_batch(c, np.asarray(x)[None, :]).items()}


def output_cone(c: Circuit) -> Circuit:
    """Drop the gates the output does not depend on; inputs keep their bit positions."""
    keep = nx.ancestors(c.graph(), c.output) | {c.output}
    gates = tuple(g for g in c.gates if g.id in keep)
    if len(gates) == len(c.gates):
        return c
    log.debug("Dropped %d gates outside the fan-in cone of %s", len(c.gates) - len(gates), c.output)
    return Circuit(inputs=c.inputs, gates=gates, output=c.output)


def _supervised_order(c: Circuit) -> tuple[str, ...]:
    if c.max_fanin > 2:
        raise CircuitError("circuit must be fan-in reduced before compiling (max fan-in is %d)" % c.max_fanin)
    return topo_sort(c)


def supervision_batch(c: Circuit, x: np.ndarray) -> SequenceBatch:
    c = output_cone(c)
    order = _supervised_order(c)
    x = np.atleast_2d(np.asarray(x, dtype=np.int8))
    values = eval_circuit_batch(c, x)
    targets = np.stack([bits_to_labels(values[gid]) for gid in order], axis=1)
    z = np.concatenate([x, labels_to_bits(targets[:, :-1])], axis=1)
    return SequenceBatch(x=x, z=z, targets=targets)


def supervision_sequence(c: Circuit, x: Sequence[int]) -> SupervisedSequence:
    if len(x) != c.num_inputs:
        raise CircuitError(f"expected {c.num_inputs} input bits, got {len(x)}")
    return supervision_batch(c, np.asarray(x)[None, :]).row(0)


@dataclass(frozen=True)
class CompiledTrace:
    circuit: Circuit  # fan-in reduced, pruned to the output cone
    order: tuple[str, ...]

    @property
    def T(self) -> int:
        """|V|: inputs plus gates."""
        return self.circuit.num_inputs + len(self.circuit.gates)

    def sequence(self, x: Sequence[int]) -> SupervisedSequence:
        return supervision_sequence(self.circuit, x)


def compile_circuit(c: Circuit) -> CompiledTrace:
    reduced = output_cone(fanin_reduce(c))
    return CompiledTrace(circuit=reduced, order=_supervised_order(reduced))


@dataclass(frozen=True)
class CircuitTask:
    circuit: Circuit
    supervised: bool = True
    _order: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        reduced = output_cone(fanin_reduce(self.circuit))
        object.__setattr__(self, "circuit", reduced)
        object.__setattr__(self, "_order", _supervised_order(reduced))

    @property
    def d(self) -> int:
        return self.circuit.num_inputs

    @property
    def T(self) -> int:
        return self.d + len(self._order) - 1 if self.supervised else self.d

    def encode(self, x: np.ndarray) -> SequenceBatch:
        if self.supervised:
            return supervision_batch(self.circuit, x)
        x = np.atleast_2d(np.asarray(x, dtype=np.int8))
        out = eval_circuit_batch(self.circuit, x)[self.circuit.output]
        return SequenceBatch(x=x, z=x.copy(), targets=bits_to_labels(out)[:, None])


def parity_as_circuit(inst: ParityInstance) -> Circuit:
    """
    XOR tree mirroring the parity decomposition: gate p{k} carries the value whose label is
    the negated tree target at position d + k (XOR 0 <-> parity label +1).
    """
    d = inst.d
    inputs = tuple(f"x{i}" for i in range(1, d + 1))
    s = inst.subset
    gates: list[Gate] = []
    for t in range(d, 5 * d // 4):
        j = 2 * (t - d)
        gates.append(Gate(id=f"p{t - d}", kind="XOR", refs=(f"x{s[j]}", f"x{s[j + 1]}")))
    for t in range(5 * d // 4, inst.T + 1):
        k = 2 * (t - 5 * d // 4)
        gates.append(Gate(id=f"p{t - d}", kind="XOR", refs=(f"p{k}", f"p{k + 1}")))
    return Circuit(inputs=inputs, gates=tuple(gates), output=gates[-1].id)


def random_circuit(num_inputs: int, num_gates: int, rng: SeededRng, *, max_fanin: int = 4) -> Circuit:
    """Random DAG whose last gate is the (sink) output; refs drawn from any earlier node."""
    if num_inputs < 1 or num_gates < 1:
        raise CircuitError("random circuits need at least one input and one gate")
    inputs = tuple(f"x{i}" for i in range(1, num_inputs + 1))
    names: list[str] = list(inputs)
    gates: list[Gate] = []
    kinds: tuple[GateKind, ...] = ("AND", "OR", "XOR", "NOT")
    for k in range(num_gates):
        gid = f"g{k + 1}"
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "NOT":
            refs = (names[int(rng.integers(len(names)))],)
        else:
            arity = int(rng.integers(2, max(2, max_fanin) + 1))
            # Favour recent nodes so deep chains actually appear.
            picks = rng.integers(0, len(names), size=arity)
            recent = rng.integers(max(0, len(names) - 4), len(names), size=1)
            picks[0] = recent[0]
            refs = tuple(names[int(i)] for i in picks)
        gates.append(Gate(id=gid, kind=kind, refs=refs))
        names.append(gid)
    return Circuit(inputs=inputs, gates=tuple(gates), output=gates[-1].id)
