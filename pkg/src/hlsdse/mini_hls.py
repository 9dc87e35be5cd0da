"""Deterministic miniature HLS backend.

Turns (kernel, design space, pragma config) into a latency number, an area
vector, and a control/data-flow graph, with zero external dependencies, so
search experiments are reproducible end to end.

Cost model (every invented constant lives in the block below):

* Op latencies in cycles: add 1, mul 3, load 2, store 1, residual call 2.
* A loop body is scheduled as a dependency DAG: loads first (at most one
  load and one store issued per array bank per cycle), compute ops of one
  unroll replica chain in declaration order, stores last.  Ops marked
  carried chain across replicas and bound the achievable II.
* Pipelined loop: latency = depth + II_eff * (trip - 1) where II_eff is
  the max of the chosen II, per-bank load/store counts of one iteration,
  and the carried-chain latency.  Non-pipelined: trip * (depth + 1), the
  +1 being loop-control overhead.  Loops with VARIABLE bound use a nominal
  trip count of 16.  Top-level loops run sequentially.
* A loop unrolled by its full fixed bound dissolves into its parent: no
  controller, no per-trip overhead, replicas schedule in parallel.
* Addresses: a memory op in replica r accesses offset + r; a dissolved
  child spliced into parent replica r is shifted by r * span(child), span
  being the row-major extent of the child's subtree.  Negative offsets are
  normalized per body and array before banking.  Bank of address a for a
  factor-P partition of size-S arrays: cyclic a % P, block a * P // S.
* Area: adder {LUT 32, FF 32}, multiplier {DSP 3, FF 16}, array bank
  {BRAM 1}, loop controller {LUT 50, FF 50}, non-inlined function instance
  {LUT 100, FF 100}.  Unit counts are peak concurrent usage over the
  schedule (folded modulo II_eff for pipelined loops).
"""

from __future__ import annotations

import itertools
import json
import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .cdfg import EDGE_TYPES, NODE_TYPES, CdfgEdge, CdfgGraph, CdfgNode, parse_graph_dict
from .design_space import (
    VARIABLE,
    DesignSpace,
    PragmaConfig,
    canonicalize,
    config_to_dict,
    load_space,
    validate_config,
)
from .errors import BackendError, KernelModelError

OP_LATENCY = {"add": 1, "mul": 3, "load": 2, "store": 1, "call": 2}
AREA_ADDER = {"LUT": 32, "FF": 32}
AREA_MULT = {"DSP": 3, "FF": 16}
AREA_BANK = {"BRAM": 1}
AREA_LOOP_CTRL = {"LUT": 50, "FF": 50}
AREA_FUNC_INSTANCE = {"LUT": 100, "FF": 100}
VARIABLE_TRIP = 16
TARGET_CLOCK_NS = 10.0
AREA_KEYS = ("LUT", "FF", "DSP", "BRAM", "URAM")

# scalarization weights for collapsing the area vector to one number
AREA_WEIGHTS = {"LUT": 1.0, "FF": 1.0, "DSP": 100.0, "BRAM": 50.0, "URAM": 50.0}

COMPUTE_KINDS = ("add", "mul")
MEM_KINDS = ("load", "store")


def scalarize_area(area: dict[str, float]) -> float:
    return float(sum(AREA_WEIGHTS[k] * area.get(k, 0) for k in AREA_WEIGHTS))


@dataclass(frozen=True)
class Op:
    kind: str
    array: str | None = None
    offset: int = 0
    func: str | None = None
    carried: bool = False


@dataclass(frozen=True)
class KernelLoop:
    id: int
    parent: int
    body: tuple[Op, ...]


@dataclass(frozen=True)
class KernelFunc:
    name: str
    body: tuple[tuple[str, int], ...]  # sorted (compute kind, count) pairs


@dataclass
class KernelModel:
    name: str
    arrays: tuple[tuple[str, int], ...]
    functions: tuple[KernelFunc, ...]
    loops: tuple[KernelLoop, ...]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        anames = [a for a, _ in self.arrays]
        if len(set(anames)) != len(anames):
            raise KernelModelError("duplicate array names")
        for a, size in self.arrays:
            if size < 1:
                raise KernelModelError(f"array {a}: size must be positive")
        fnames = [f.name for f in self.functions]
        if len(set(fnames)) != len(fnames):
            raise KernelModelError("duplicate function names")
        for fn in self.functions:
            for kind, count in fn.body:
                if kind not in COMPUTE_KINDS or count < 1:
                    raise KernelModelError(f"function {fn.name}: bodies are compute-only multisets")
        if not self.loops:
            raise KernelModelError("kernel needs at least one loop")
        for j, lp in enumerate(self.loops):
            if lp.id != j or not (-1 <= lp.parent < j):
                raise KernelModelError("loop ids must be 0..n-1 with earlier parents")
            for op in lp.body:
                if op.kind in MEM_KINDS:
                    if op.array not in set(anames):
                        raise KernelModelError(f"loop {j}: op references unknown array {op.array!r}")
                elif op.kind == "call":
                    if op.func not in set(fnames):
                        raise KernelModelError(f"loop {j}: call references unknown function {op.func!r}")
                elif op.kind not in COMPUTE_KINDS:
                    raise KernelModelError(f"loop {j}: unknown op kind {op.kind!r}")
                if op.carried and op.kind not in COMPUTE_KINDS:
                    raise KernelModelError(f"loop {j}: only compute ops may be carried")
        if not any(lp.body for lp in self.loops):
            raise KernelModelError("kernel has no operations")

    def array_size(self, name: str) -> int:
        for a, size in self.arrays:
            if a == name:
                return size
        raise KeyError(name)

    def children(self, loop_id: int) -> list[int]:
        return [lp.id for lp in self.loops if lp.parent == loop_id]

    def function(self, name: str) -> KernelFunc:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    @staticmethod
    def from_dict(d: dict) -> "KernelModel":
        try:
            arrays = tuple((str(a["name"]), int(a["size"])) for a in d.get("arrays", []))
            functions = tuple(
                KernelFunc(str(f["name"]), tuple(sorted((str(k), int(v)) for k, v in f["body"].items())))
                for f in d.get("functions", [])
            )
            loops = tuple(
                KernelLoop(
                    id=int(ld["id"]),
                    parent=int(ld["parent"]),
                    body=tuple(
                        Op(
                            kind=str(o["op"]),
                            array=o.get("array"),
                            offset=int(o.get("offset", 0)),
                            func=o.get("func"),
                            carried=bool(o.get("carried", False)),
                        )
                        for o in ld.get("body", [])
                    ),
                )
                for ld in d.get("loops", [])
            )
            name = str(d["name"])
        except (KeyError, TypeError, ValueError) as exc:
            raise KernelModelError(f"malformed kernel dict: {exc}") from exc
        return KernelModel(name=name, arrays=arrays, functions=functions, loops=loops)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "arrays": [{"name": a, "size": s} for a, s in self.arrays],
            "functions": [{"name": f.name, "body": dict(f.body)} for f in self.functions],
            "loops": [
                {
                    "id": lp.id,
                    "parent": lp.parent,
                    "body": [
                        {
                            "op": op.kind,
                            **({"array": op.array, "offset": op.offset} if op.array else {}),
                            **({"func": op.func} if op.func else {}),
                            **({"carried": True} if op.carried else {}),
                        }
                        for op in lp.body
                    ],
                }
                for lp in self.loops
            ],
        }


def load_kernel(path: str | Path) -> KernelModel:
    with open(path) as fh:
        return KernelModel.from_dict(json.load(fh))


def bind_check(kernel: KernelModel, space: DesignSpace) -> None:
    """Check that a design space matches a kernel's structure."""
    if len(space.loops) != len(kernel.loops):
        raise KernelModelError(
            f"space declares {len(space.loops)} loops, kernel has {len(kernel.loops)}"
        )
    for slp, klp in zip(space.loops, kernel.loops):
        if slp.parent != klp.parent:
            raise KernelModelError(f"loop {klp.id}: tree shape differs between kernel and space")
    anames = {a for a, _ in kernel.arrays}
    for a in space.arrays:
        if a.name not in anames:
            raise KernelModelError(f"space array {a.name!r} not in kernel")
        size = kernel.array_size(a.name)
        for f in a.partition_factors:
            if f != 1 and size % f != 0:
                raise KernelModelError(
                    f"array {a.name}: partition factor {f} does not divide size {size}"
                )
    fnames = {f.name for f in kernel.functions}
    for fn in space.functions:
        if fn.name not in fnames:
            raise KernelModelError(f"space function {fn.name!r} not in kernel")


# ---------------------------------------------------------------------------
# elaboration


@dataclass
class BodyOp:
    uid: int
    kind: str  # add mul load store call subloop
    array: str | None = None
    addr: int = 0
    func: str | None = None
    carry_key: tuple | None = None
    deps: list[int] = field(default_factory=list)
    child: "ElabLoop | None" = None


@dataclass
class _Group:
    loads: list[BodyOp] = field(default_factory=list)
    chain: list = field(default_factory=list)  # BodyOp or _InlineBlock
    stores: list[BodyOp] = field(default_factory=list)


@dataclass
class _InlineBlock:
    groups: list[_Group]


@dataclass
class ElabLoop:
    loop_id: int | None
    trip: int
    pipelined: bool
    ii: int | None
    ops: list[BodyOp]
    children: list["ElabLoop"]
    # filled by schedule()
    schedule: list[tuple[BodyOp, int, int]] = field(default_factory=list)
    depth: int = 0
    ii_eff: int | None = None
    latency: int = 0


@dataclass
class Elaborated:
    root: ElabLoop
    kernel: KernelModel
    space: DesignSpace
    config: PragmaConfig
    partitions: dict[str, tuple[str, int]]


def _shift_block(block: _InlineBlock, delta: int) -> None:
    for g in block.groups:
        for op in g.loads + g.stores:
            op.addr += delta
        for elem in g.chain:
            if isinstance(elem, _InlineBlock):
                _shift_block(elem, delta)


def _wire_group(g: _Group, entry: list[int], out: list[BodyOp]) -> list[int]:
    """Attach dependency edges within one replica group; returns exit uids."""
    for ld in g.loads:
        ld.deps.extend(entry)
        out.append(ld)
    prev = [ld.uid for ld in g.loads] or list(entry)
    for elem in g.chain:
        if isinstance(elem, _InlineBlock):
            exits: list[int] = []
            for sub in elem.groups:
                exits.extend(_wire_group(sub, prev, out))
            prev = exits or prev
        else:
            elem.deps.extend(prev)
            out.append(elem)
            prev = [elem.uid]
    for st in g.stores:
        st.deps.extend(prev)
        out.append(st)
    return [st.uid for st in g.stores] or prev


def _wire_body(groups: list[_Group]) -> list[BodyOp]:
    out: list[BodyOp] = []
    for g in groups:
        _wire_group(g, [], out)
    # carried accumulations chain across replicas in elaboration order
    chains: dict[tuple, list[BodyOp]] = {}
    for op in out:
        if op.carry_key is not None:
            chains.setdefault(op.carry_key, []).append(op)
    for ops in chains.values():
        ops.sort(key=lambda o: o.uid)
        for prev_op, op in zip(ops, ops[1:]):
            op.deps.append(prev_op.uid)
    out.sort(key=lambda o: o.uid)
    return out


def _normalize_addresses(ops: list[BodyOp]) -> None:
    lo: dict[str, int] = {}
    for op in ops:
        if op.kind in MEM_KINDS:
            lo[op.array] = min(lo.get(op.array, 0), op.addr)
    for op in ops:
        if op.kind in MEM_KINDS and lo.get(op.array, 0) < 0:
            op.addr -= lo[op.array]


class _Elaborator:
    def __init__(self, kernel: KernelModel, space: DesignSpace, cfg: PragmaConfig):
        self.kernel = kernel
        self.space = space
        self.cfg = cfg
        self.uids = itertools.count()

    def _expand_op(self, op: Op, replica: int, loop_id: int, op_idx: int) -> list[BodyOp]:
        if op.kind == "call":
            fidx = [f.name for f in self.space.functions].index(op.func) if any(
                f.name == op.func for f in self.space.functions
            ) else -1
            inlined = fidx >= 0 and self.cfg.inlines[fidx]
            if inlined:
                fn = self.kernel.function(op.func)
                out = []
                for kind, count in fn.body:
                    out.extend(BodyOp(next(self.uids), kind) for _ in range(count))
                return out
            return [BodyOp(next(self.uids), "call", func=op.func)]
        carry = (loop_id, op_idx) if op.carried else None
        if op.kind in MEM_KINDS:
            return [BodyOp(next(self.uids), op.kind, array=op.array, addr=op.offset + replica)]
        return [BodyOp(next(self.uids), op.kind, carry_key=carry)]

    def build(self, loop_id: int) -> tuple[ElabLoop | _InlineBlock, int]:
        klp = self.kernel.loops[loop_id]
        slp = self.space.loops[loop_id]
        st = self.cfg.loops[loop_id]
        nominal = VARIABLE_TRIP if slp.bound == VARIABLE else slp.bound
        u = st.unroll
        trip = math.ceil(nominal / u)
        groups: list[_Group] = []
        span_children = 1
        for r in range(u):
            g = _Group()
            for op_idx, op in enumerate(klp.body):
                for bop in self._expand_op(op, r, loop_id, op_idx):
                    if bop.kind == "load":
                        g.loads.append(bop)
                    elif bop.kind == "store":
                        g.stores.append(bop)
                    else:
                        g.chain.append(bop)
            for child_id in self.kernel.children(loop_id):
                sub, span_c = self.build(child_id)
                span_children = max(span_children, span_c)
                if isinstance(sub, _InlineBlock):
                    _shift_block(sub, r * span_c)
                    g.chain.append(sub)
                else:
                    g.chain.append(BodyOp(next(self.uids), "subloop", child=sub))
            groups.append(g)
        span = nominal * span_children
        dissolved = isinstance(slp.bound, int) and u == slp.bound
        if dissolved:
            return _InlineBlock(groups), span
        ops = _wire_body(groups)
        _normalize_addresses(ops)
        children = [op.child for op in ops if op.kind == "subloop"]
        return ElabLoop(loop_id, trip, st.pipelined, st.ii, ops, children), span

    def build_root(self) -> ElabLoop:
        g = _Group()
        for lp in self.kernel.loops:
            if lp.parent != -1:
                continue
            sub, _span = self.build(lp.id)
            if isinstance(sub, _InlineBlock):
                g.chain.append(sub)
            else:
                g.chain.append(BodyOp(next(self.uids), "subloop", child=sub))
        ops = _wire_body([g])
        _normalize_addresses(ops)
        children = [op.child for op in ops if op.kind == "subloop"]
        return ElabLoop(None, 1, False, None, ops, children)


def elaborate(kernel: KernelModel, space: DesignSpace, config: PragmaConfig) -> Elaborated:
    bind_check(kernel, space)
    validate_config(config, space)
    cfg = canonicalize(config, space)
    root = _Elaborator(kernel, space, cfg).build_root()
    partitions = {a.name: p for a, p in zip(space.arrays, cfg.partitions)}
    return Elaborated(root=root, kernel=kernel, space=space, config=cfg, partitions=partitions)


# ---------------------------------------------------------------------------
# scheduling


def bank_of(addr: int, ptype: str, factor: int, size: int) -> int:
    a = addr % size
    if factor <= 1:
        return 0
    if ptype == "cyclic":
        return a % factor
    return (a * factor) // size


def _op_bank(op: BodyOp, elab: Elaborated) -> tuple[str, int] | None:
    if op.kind not in MEM_KINDS:
        return None
    ptype, factor = elab.partitions.get(op.array, ("none", 1))
    return (op.array, bank_of(op.addr, ptype, factor, elab.kernel.array_size(op.array)))


def _op_latency(op: BodyOp) -> int:
    if op.kind == "subloop":
        return op.child.latency
    return OP_LATENCY[op.kind]


def _banks_inside(el: ElabLoop, elab: Elaborated, memo: dict[int, frozenset]) -> frozenset:
    """Every bank touched anywhere within one activation of the loop."""
    key = id(el)
    if key not in memo:
        banks = set()
        for op in el.ops:
            if op.kind == "subloop":
                banks |= _banks_inside(op.child, elab, memo)
            elif op.kind in MEM_KINDS:
                banks.add(_op_bank(op, elab))
        memo[key] = frozenset(banks)
    return memo[key]


def _pressure_ii(el: ElabLoop, elab: Elaborated) -> int:
    loads: dict[tuple[str, int], int] = {}
    stores: dict[tuple[str, int], int] = {}
    carried = 0
    for op in el.ops:
        bank = _op_bank(op, elab)
        if op.kind == "load":
            loads[bank] = loads.get(bank, 0) + 1
        elif op.kind == "store":
            stores[bank] = stores.get(bank, 0) + 1
        elif op.carry_key is not None:
            carried += _op_latency(op)
    # carried chain: result feeds back through a register, so the next
    # iteration launches no sooner than 1 + (chain latency) cycles later
    return max(
        el.ii or 1,
        max(loads.values(), default=0),
        max(stores.values(), default=0),
        1 + carried if carried else 1,
    )


def _schedule_loop(el: ElabLoop, elab: Elaborated, bank_memo: dict[int, frozenset]) -> None:
    for child in el.children:
        _schedule_loop(child, elab, bank_memo)
    # for pipelined loops the initiation interval is fixed by bank pressure
    # before scheduling; the body schedule then keeps same-bank accesses on
    # distinct residues mod ii_eff so overlapped iterations never collide
    ii_eff = _pressure_ii(el, elab) if (el.loop_id is not None and el.pipelined) else None
    finish: dict[int, int] = {}
    pending = list(el.ops)
    sched: list[tuple[BodyOp, int, int]] = []
    reserved: set[tuple[tuple[str, int], str, int]] = set()
    busy_until: dict[tuple[str, int], int] = {}
    t = 0
    while pending:
        issued: set[tuple[tuple[str, int], str]] = set()
        still: list[BodyOp] = []
        for op in pending:
            if any(finish.get(d, t + 1) > t for d in op.deps):
                still.append(op)
                continue
            if op.kind == "subloop":
                # a running loop owns its banks for its whole activation, so
                # sibling activations sharing a bank serialize
                sub_banks = _banks_inside(op.child, elab, bank_memo)
                if any(busy_until.get(b, 0) > t for b in sub_banks) or any(
                    (b, k) in issued for b in sub_banks for k in MEM_KINDS
                ):
                    still.append(op)
                    continue
                lat = _op_latency(op)
                for b in sub_banks:
                    busy_until[b] = t + lat
                finish[op.uid] = t + lat
                sched.append((op, t, lat))
                continue
            bank = _op_bank(op, elab)
            if bank is not None:
                if (bank, op.kind) in issued or busy_until.get(bank, 0) > t:
                    still.append(op)
                    continue
                if ii_eff is not None and (bank, op.kind, t % ii_eff) in reserved:
                    still.append(op)
                    continue
                issued.add((bank, op.kind))
                if ii_eff is not None:
                    reserved.add((bank, op.kind, t % ii_eff))
            lat = _op_latency(op)
            finish[op.uid] = t + lat
            sched.append((op, t, lat))
        pending = still
        t += 1
    el.schedule = sched
    el.depth = max((f for f in finish.values()), default=0)
    if el.loop_id is None:
        el.ii_eff = None
        el.latency = el.depth
        return
    if el.pipelined:
        el.ii_eff = ii_eff
        el.latency = el.depth + el.ii_eff * (el.trip - 1)
    else:
        el.ii_eff = None
        el.latency = el.trip * (el.depth + 1)


@dataclass(frozen=True)
class ScheduleReport:
    latency: int
    depth: int


def schedule(elab: Elaborated) -> ScheduleReport:
    """Fill per-loop schedules bottom-up; returns the design latency."""
    _schedule_loop(elab.root, elab, {})
    return ScheduleReport(latency=elab.root.latency, depth=elab.root.depth)


# ---------------------------------------------------------------------------
# area


def _unit_peak(el: ElabLoop, kind: str, memo: dict[tuple[int, str], int]) -> int:
    key = (id(el), kind)
    if key in memo:
        return memo[key]
    fold = el.ii_eff if (el.pipelined and el.trip > 1 and el.ii_eff) else None
    window = fold if fold else max(el.depth, 1)
    usage = [0] * window
    for op, start, lat in el.schedule:
        if op.kind == kind:
            contrib = 1
        elif op.kind == "subloop":
            contrib = _unit_peak(op.child, kind, memo)
        else:
            continue
        if contrib == 0:
            continue
        for t in range(start, start + lat):
            usage[t % window if fold else min(t, window - 1)] += contrib
    peak = max(usage, default=0)
    memo[key] = peak
    return peak


def _count_controllers(el: ElabLoop) -> int:
    n = 0 if el.loop_id is None else 1
    return n + sum(_count_controllers(c) for c in el.children)


def _collect_calls(el: ElabLoop, out: set[str]) -> None:
    for op in el.ops:
        if op.kind == "call":
            out.add(op.func)
    for c in el.children:
        _collect_calls(c, out)


def estimate_area(elab: Elaborated) -> dict[str, int]:
    memo: dict[tuple[int, str], int] = {}
    adders = _unit_peak(elab.root, "add", memo)
    mults = _unit_peak(elab.root, "mul", memo)
    ctrls = _count_controllers(elab.root)
    calls: set[str] = set()
    _collect_calls(elab.root, calls)
    banks = 0
    for name, _size in elab.kernel.arrays:
        banks += elab.partitions.get(name, ("none", 1))[1]
    area = {
        "LUT": AREA_ADDER["LUT"] * adders + AREA_LOOP_CTRL["LUT"] * ctrls + AREA_FUNC_INSTANCE["LUT"] * len(calls),
        "FF": AREA_ADDER["FF"] * adders + AREA_MULT["FF"] * mults + AREA_LOOP_CTRL["FF"] * ctrls + AREA_FUNC_INSTANCE["FF"] * len(calls),
        "DSP": AREA_MULT["DSP"] * mults,
        "BRAM": AREA_BANK["BRAM"] * banks,
        "URAM": 0,
    }
    return area


# ---------------------------------------------------------------------------
# graph emission


class _Emitter:
    def __init__(self, elab: Elaborated):
        self.elab = elab
        self.nodes: list[CdfgNode] = []
        self.edges: list[CdfgEdge] = []
        self.op_in: dict[int, int] = {}
        self.op_out: dict[int, int] = {}
        self.mem_ops: list[BodyOp] = []

    def _node(self, opcode: str, bitwidth: int = 32, const: float | None = None) -> int:
        nid = len(self.nodes)
        self.nodes.append(
            CdfgNode(id=nid, node_type=NODE_TYPES[opcode], opcode=opcode, bitwidth=bitwidth, const_value=const)
        )
        return nid

    def _edge(self, etype: str, src: int, dst: int) -> None:
        self.edges.append(CdfgEdge(id=len(self.edges), edge_type=EDGE_TYPES[etype], src=src, dst=dst))

    def _walk(self, el: ElabLoop, entry_first: int) -> tuple[int, int]:
        """Emit one body; returns (first entry node, last entry node)."""
        if el.loop_id is None:
            first = last = entry_first
        else:
            # entry chain length tracks the declared iteration space, not the
            # post-unroll trip, so unrolling strictly grows the graph; the
            # hardware trip count survives in the bitwidth attribute
            bound = self.elab.space.loops[el.loop_id].bound
            launches = VARIABLE_TRIP if bound == VARIABLE else int(bound)
            bw = max(int(el.trip).bit_length(), 1)
            const = float(el.ii_eff) if el.pipelined else None
            entries = [self._node("loop_iter", bitwidth=bw, const=const) for _ in range(launches)]
            for a, b in zip(entries, entries[1:]):
                self._edge("control", a, b)
            first, last = entries[0], entries[-1]
        for op in el.ops:
            if op.kind == "subloop":
                cf, cl = self._walk(op.child, first)
                self.op_in[op.uid] = cf
                self.op_out[op.uid] = cl
            else:
                nid = self._node(op.kind)
                self.op_in[op.uid] = nid
                self.op_out[op.uid] = nid
                if op.kind in MEM_KINDS:
                    self.mem_ops.append(op)
        for op in el.ops:
            for d in sorted(op.deps):
                self._edge("data", self.op_out[d], self.op_in[op.uid])
            if not op.deps:
                self._edge("control", first, self.op_in[op.uid])
        return first, last

    def emit(self) -> CdfgGraph:
        entry = self._node("kernel_entry", bitwidth=1)
        self._walk(self.elab.root, entry)
        bank_nodes: dict[tuple[str, int], int] = {}
        for name, _size in self.elab.kernel.arrays:
            factor = self.elab.partitions.get(name, ("none", 1))[1]
            for b in range(factor):
                bank_nodes[(name, b)] = self._node("bank")
        for op in self.mem_ops:
            bank = _op_bank(op, self.elab)
            if op.kind == "load":
                self._edge("memory", bank_nodes[bank], self.op_in[op.uid])
            else:
                self._edge("memory", self.op_in[op.uid], bank_nodes[bank])
        return CdfgGraph(tuple(self.nodes), tuple(self.edges))


def emit_cdfg(elab: Elaborated) -> CdfgGraph:
    """Deterministic graph view of a scheduled design."""
    if not elab.root.schedule and elab.root.ops:
        raise BackendError("emit_cdfg requires a scheduled design (call schedule first)")
    return _Emitter(elab).emit()


# ---------------------------------------------------------------------------
# backends


@dataclass(frozen=True)
class SynthesisResult:
    graph: CdfgGraph
    latency: int
    area: dict[str, int]

    def __post_init__(self):
        if self.latency < 1:
            raise BackendError(f"latency must be positive, got {self.latency}")
        for k in AREA_KEYS:
            if self.area.get(k, 0) < 0:
                raise BackendError(f"negative area component {k}")


@dataclass(frozen=True)
class BackendFailure:
    kind: str  # timeout | tool_error | parse_error
    detail: str = ""


def synthesize(kernel: KernelModel, space: DesignSpace, config: PragmaConfig) -> SynthesisResult:
    """Full pipeline: elaborate, schedule, area, graph.  Pure function."""
    elab = elaborate(kernel, space, config)
    report = schedule(elab)
    area = estimate_area(elab)
    graph = emit_cdfg(elab)
    return SynthesisResult(graph=graph, latency=report.latency, area=area)


class MiniHlsBackend:
    """In-process backend; deterministic and failure-free."""

    name = "mini-hls"
    clock_ns = TARGET_CLOCK_NS

    def __init__(self, kernel: KernelModel, space: DesignSpace):
        bind_check(kernel, space)
        self.kernel = kernel
        self.space = space

    def synthesize(self, config: PragmaConfig) -> SynthesisResult:
        return synthesize(self.kernel, self.space, config)


def _parse_json_report(path: Path) -> SynthesisResult:
    with open(path) as fh:
        d = json.load(fh)
    graph = parse_graph_dict(d["graph"])
    area = {k: int(d["area"].get(k, 0)) for k in AREA_KEYS}
    return SynthesisResult(graph=graph, latency=int(d["latency"]), area=area)


PARSER_REGISTRY = {"json": _parse_json_report}


def register_parser(name: str, fn) -> None:
    PARSER_REGISTRY[name] = fn


def run_external(
    command: str,
    config: PragmaConfig,
    timeout_s: float = 300.0,
    parser: str = "json",
) -> SynthesisResult | BackendFailure:
    """Run one external synthesis via a shell command template.

    The template must contain {design} and {out} placeholders; the design
    file is the JSON-serialized pragma config.  Timeouts and nonzero exits
    map to BackendFailure outcomes rather than exceptions, so a search can
    charge them against the budget and move on.
    """
    if parser not in PARSER_REGISTRY:
        raise BackendError(f"unknown parser {parser!r}")
    with tempfile.TemporaryDirectory(prefix="hlsdse-ext-") as tmp:
        design = Path(tmp) / "design.json"
        out = Path(tmp) / "result.json"
        design.write_text(json.dumps(config_to_dict(config)))
        argv = [a.format(design=str(design), out=str(out)) for a in shlex.split(command)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout_s)
        except subprocess.TimeoutExpired:
            return BackendFailure(kind="timeout", detail=f"exceeded {timeout_s}s")
        except OSError as exc:
            return BackendFailure(kind="tool_error", detail=str(exc))
        if proc.returncode != 0:
            return BackendFailure(kind="tool_error", detail=(proc.stderr or "")[-500:])
        try:
            return PARSER_REGISTRY[parser](out)
        except Exception as exc:
            return BackendFailure(kind="parse_error", detail=str(exc))


class ExternalBackend:
    """Adapter for a real HLS tool driven by a command template."""

    name = "external"

    def __init__(self, command: str, timeout_s: float = 300.0, parser: str = "json"):
        self.command = command
        self.timeout_s = timeout_s
        self.parser = parser

    def synthesize(self, config: PragmaConfig) -> SynthesisResult | BackendFailure:
        return run_external(self.command, config, self.timeout_s, self.parser)


# ---------------------------------------------------------------------------
# built-in kernels

_FIXTURE_DIR = Path(__file__).parent / "fixtures"

BUILTIN_KERNELS = ("vecadd", "vecadd2d", "stencil1d", "macreduce")


def builtin_paths(name: str) -> tuple[Path, Path]:
    if name not in BUILTIN_KERNELS:
        raise KeyError(f"unknown builtin kernel {name!r}; have {BUILTIN_KERNELS}")
    return _FIXTURE_DIR / f"{name}.kernel.json", _FIXTURE_DIR / f"{name}.space.json"


def load_builtin(name: str) -> tuple[KernelModel, DesignSpace]:
    kpath, spath = builtin_paths(name)
    kernel = load_kernel(kpath)
    space = load_space(spath)
    bind_check(kernel, space)
    return kernel, space
