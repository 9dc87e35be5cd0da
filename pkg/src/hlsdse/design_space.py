"""Pragma design spaces and the sampling distributions over them.

A design space declares, per kernel, the loop nest (with bounds), the
partitionable arrays, and the inlinable functions.  Every tunable choice
becomes a categorical decision site; the search distribution Theta stores
one unconstrained logit vector per site and derives probabilities by
softmax, so every parameter setting is a valid distribution.

Sampling enforces three legality rules by masking and renormalizing:

* R1: every loop nested inside a pipelined loop is fully unrolled and not
  itself pipelined.  Forced loops consume no randomness.
* R2: pipelining and full unrolling are mutually exclusive on one loop, so
  the full-unroll factor is masked while sampling a pipelined loop.
* R3: a loop whose strict descendants include a variable-bound loop cannot
  be pipelined (the forced full unroll of R1 would be undefined).

Initiation-interval sites are masked (no draw, value None) whenever the
loop is not pipelined, and canonical keys quotient those masked fields out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InfeasibleSiteError, SpaceValidationError

VARIABLE = "VARIABLE"

PARTITION_TYPES = ("block", "cyclic")


@dataclass(frozen=True)
class LoopDecl:
    """One loop level; parent is -1 for top level, else an earlier loop id."""

    id: int
    parent: int
    bound: int | str
    unroll_options: tuple[int, ...]
    ii_options: tuple[int, ...]
    pipeline_prob: float = 0.5


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    partition_types: tuple[str, ...]
    partition_factors: tuple[int, ...]


@dataclass(frozen=True)
class FuncDecl:
    name: str
    inlinable: bool
    inline_prob: float = 0.5


@dataclass(frozen=True)
class LoopSetting:
    unroll: int
    pipelined: bool
    ii: int | None


@dataclass(frozen=True)
class PragmaConfig:
    """A concrete pragma assignment, aligned with its space's declarations."""

    loops: tuple[LoopSetting, ...]
    partitions: tuple[tuple[str, int], ...]
    inlines: tuple[bool, ...]


@dataclass
class DesignSpace:
    loops: tuple[LoopDecl, ...]
    arrays: tuple[ArrayDecl, ...] = ()
    functions: tuple[FuncDecl, ...] = ()
    _children: dict[int, list[int]] = field(default_factory=dict, repr=False)
    _has_var_desc: dict[int, bool] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.validate()
        self._children = {j: [] for j in range(len(self.loops))}
        for lp in self.loops:
            if lp.parent >= 0:
                self._children[lp.parent].append(lp.id)
        # variable-bound descendants block pipelining of every ancestor (R3)
        self._has_var_desc = {}
        for j in reversed(range(len(self.loops))):
            flag = False
            for c in self._children[j]:
                if self.loops[c].bound == VARIABLE or self._has_var_desc[c]:
                    flag = True
            self._has_var_desc[j] = flag

    def validate(self) -> None:
        for j, lp in enumerate(self.loops):
            if lp.id != j:
                raise SpaceValidationError(f"loop ids must be 0..n-1 in order, got {lp.id} at {j}")
            if not (-1 <= lp.parent < j):
                raise SpaceValidationError(f"loop {j}: parent {lp.parent} must be -1 or an earlier id")
            if lp.bound != VARIABLE and (not isinstance(lp.bound, int) or lp.bound < 1):
                raise SpaceValidationError(f"loop {j}: bound must be a positive int or VARIABLE")
            if not lp.unroll_options:
                raise SpaceValidationError(f"loop {j}: empty unroll options")
            if list(lp.unroll_options) != sorted(set(lp.unroll_options)):
                raise SpaceValidationError(f"loop {j}: unroll options must be strictly ascending")
            if 1 not in lp.unroll_options:
                raise SpaceValidationError(f"loop {j}: unroll options must include 1")
            for f in lp.unroll_options:
                if f < 1:
                    raise SpaceValidationError(f"loop {j}: unroll factor {f} < 1")
                if isinstance(lp.bound, int) and lp.bound % f != 0 and f != lp.bound:
                    raise SpaceValidationError(
                        f"loop {j}: unroll factor {f} neither divides nor equals bound {lp.bound}"
                    )
            if not lp.ii_options or any(v < 1 for v in lp.ii_options):
                raise SpaceValidationError(f"loop {j}: ii options must be nonempty and >= 1")
            if not (0.0 < lp.pipeline_prob < 1.0):
                raise SpaceValidationError(f"loop {j}: pipeline_prob must lie in (0, 1)")
        names = [a.name for a in self.arrays]
        if len(set(names)) != len(names):
            raise SpaceValidationError("duplicate array names")
        for a in self.arrays:
            for t in a.partition_types:
                if t not in PARTITION_TYPES:
                    raise SpaceValidationError(f"array {a.name}: unknown partition type {t!r}")
            if not a.partition_factors or 1 not in a.partition_factors:
                raise SpaceValidationError(f"array {a.name}: partition factors must include 1")
            if any(f < 1 for f in a.partition_factors):
                raise SpaceValidationError(f"array {a.name}: negative partition factor")
        fnames = [f.name for f in self.functions]
        if len(set(fnames)) != len(fnames):
            raise SpaceValidationError("duplicate function names")
        for fn in self.functions:
            if not (0.0 < fn.inline_prob < 1.0):
                raise SpaceValidationError(f"function {fn.name}: inline_prob must lie in (0, 1)")

    def children(self, loop_id: int) -> list[int]:
        return self._children[loop_id]

    def has_variable_descendant(self, loop_id: int) -> bool:
        return self._has_var_desc[loop_id]

    def ancestors(self, loop_id: int) -> list[int]:
        out = []
        p = self.loops[loop_id].parent
        while p >= 0:
            out.append(p)
            p = self.loops[p].parent
        return out

    @staticmethod
    def from_dict(d: dict) -> "DesignSpace":
        try:
            loops = tuple(
                LoopDecl(
                    id=int(ld["id"]),
                    parent=int(ld["parent"]),
                    bound=ld["bound"] if ld["bound"] == VARIABLE else int(ld["bound"]),
                    unroll_options=tuple(int(x) for x in ld["unroll_options"]),
                    ii_options=tuple(int(x) for x in ld["ii_options"]),
                    pipeline_prob=float(ld.get("pipeline_prob", 0.5)),
                )
                for ld in d.get("loops", [])
            )
            arrays = tuple(
                ArrayDecl(
                    name=str(a["name"]),
                    partition_types=tuple(str(t) for t in a.get("types", [])),
                    partition_factors=tuple(int(f) for f in a.get("factors", [1])),
                )
                for a in d.get("arrays", [])
            )
            functions = tuple(
                FuncDecl(
                    name=str(f["name"]),
                    inlinable=bool(f.get("inlinable", False)),
                    inline_prob=float(f.get("inline_prob", 0.5)),
                )
                for f in d.get("functions", [])
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SpaceValidationError(f"malformed design-space dict: {exc}") from exc
        return DesignSpace(loops=loops, arrays=arrays, functions=functions)

    def to_dict(self) -> dict:
        return {
            "loops": [
                {
                    "id": lp.id,
                    "parent": lp.parent,
                    "bound": lp.bound,
                    "unroll_options": list(lp.unroll_options),
                    "ii_options": list(lp.ii_options),
                    "pipeline_prob": lp.pipeline_prob,
                }
                for lp in self.loops
            ],
            "arrays": [
                {"name": a.name, "types": list(a.partition_types), "factors": list(a.partition_factors)}
                for a in self.arrays
            ],
            "functions": [
                {"name": f.name, "inlinable": f.inlinable, "inline_prob": f.inline_prob}
                for f in self.functions
            ],
        }


def load_space(path: str | Path) -> DesignSpace:
    with open(path) as fh:
        return DesignSpace.from_dict(json.load(fh))


@dataclass
class Site:
    """One categorical decision site with unconstrained logits."""

    key: str
    kind: str
    options: tuple
    logits: np.ndarray

    def copy(self) -> "Site":
        return Site(self.key, self.kind, self.options, self.logits.copy())


@dataclass
class ThetaDistribution:
    sites: list[Site]

    def copy(self) -> "ThetaDistribution":
        return ThetaDistribution([s.copy() for s in self.sites])

    @property
    def dim(self) -> int:
        return sum(len(s.options) for s in self.sites)

    def site(self, key: str) -> Site:
        for s in self.sites:
            if s.key == key:
                return s
        raise KeyError(key)


def _partition_options(a: ArrayDecl) -> tuple:
    opts = [("none", 1)]
    for t in a.partition_types:
        for f in a.partition_factors:
            if f > 1:
                opts.append((t, f))
    return tuple(opts)


def theta_sites(space: DesignSpace) -> list[tuple[str, str, tuple]]:
    """Fixed ordering of decision sites: per-loop unroll/pipeline/ii, then
    array partitions, then inlinable-function flags."""
    out: list[tuple[str, str, tuple]] = []
    for lp in space.loops:
        out.append((f"loop{lp.id}.unroll", "unroll", tuple(lp.unroll_options)))
        out.append((f"loop{lp.id}.pipeline", "pipeline", (False, True)))
        out.append((f"loop{lp.id}.ii", "ii", tuple(lp.ii_options)))
    for a in space.arrays:
        out.append((f"array.{a.name}.partition", "partition", _partition_options(a)))
    for fn in space.functions:
        if fn.inlinable:
            out.append((f"func.{fn.name}.inline", "inline", (False, True)))
    return out


def init_theta_uniform(space: DesignSpace) -> ThetaDistribution:
    """All-zero logits: uniform over each site's options."""
    return ThetaDistribution(
        [Site(key, kind, opts, np.zeros(len(opts))) for key, kind, opts in theta_sites(space)]
    )


def init_theta_from_priors(space: DesignSpace) -> ThetaDistribution:
    """Uniform logits except pipeline/inline sites, which start at the
    declared prior probabilities."""
    theta = init_theta_uniform(space)
    for s in theta.sites:
        if s.kind == "pipeline":
            loop_id = int(s.key.split(".")[0][4:])
            p = space.loops[loop_id].pipeline_prob
            s.logits = np.array([np.log(1.0 - p), np.log(p)])
        elif s.kind == "inline":
            name = s.key.split(".")[1]
            p = next(f.inline_prob for f in space.functions if f.name == name)
            s.logits = np.array([np.log(1.0 - p), np.log(p)])
    return theta


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def site_probs(theta: ThetaDistribution, site_index: int) -> np.ndarray:
    """Softmax probabilities of one site, in its option order."""
    return softmax_probs(theta.sites[site_index].logits)


def flatten_theta(theta: ThetaDistribution) -> np.ndarray:
    """Concatenated per-site probability vectors (the conditioning input)."""
    return np.concatenate([softmax_probs(s.logits) for s in theta.sites])


def theta_leaf_tensors(theta: ThetaDistribution) -> list[ad.Tensor]:
    """One leaf tensor per site, initialized from the current logits."""
    return [ad.tensor(s.logits) for s in theta.sites]


def flatten_from_leaves(theta: ThetaDistribution, leaves: list[ad.Tensor]) -> ad.Tensor:
    """Concatenated per-site softmax as a (1, dim) tensor built on the given
    leaves, so repeated calls share optimizer state."""
    probs = [
        ad.softmax(ad.reshape(t, (1, len(s.options))), axis=-1)
        for t, s in zip(leaves, theta.sites)
    ]
    return ad.concat(probs, axis=1)


def flatten_theta_tensors(theta: ThetaDistribution) -> tuple[list[ad.Tensor], ad.Tensor]:
    """Differentiable flatten: returns the logit leaf tensors plus the
    concatenated softmax vector as a (1, dim) tensor."""
    leaves = theta_leaf_tensors(theta)
    return leaves, flatten_from_leaves(theta, leaves)


def _draw(probs: np.ndarray, allowed: np.ndarray, rng: np.random.Generator, key: str) -> int:
    """One masked-renormalized draw; returns the chosen option index."""
    masked = probs * allowed
    total = masked.sum()
    if total <= 0.0:
        raise InfeasibleSiteError(f"site {key}: all options masked out")
    masked = masked / total
    r = rng.random()
    idx = int(np.searchsorted(np.cumsum(masked), r, side="right"))
    return min(idx, len(masked) - 1)


def sample_config(
    theta: ThetaDistribution, space: DesignSpace, rng: np.random.Generator
) -> PragmaConfig:
    """Draw one legal configuration from Theta.

    Per loop the draw order is pipeline, then unroll, then ii; loops are
    visited in id order (parents first), so R1-forced loops are known
    before their sites would be drawn.
    """
    sites = {s.key: s for s in theta.sites}
    loops: list[LoopSetting] = []
    for lp in space.loops:
        forced = any(loops[a].pipelined for a in space.ancestors(lp.id))
        if forced:
            # R1: bound is fixed here because R3 blocked the ancestor otherwise
            loops.append(LoopSetting(unroll=int(lp.bound), pipelined=False, ii=None))
            continue
        s_pipe = sites[f"loop{lp.id}.pipeline"]
        p_probs = softmax_probs(s_pipe.logits)
        allowed = np.ones(2)
        if space.has_variable_descendant(lp.id) or lp.bound == 1:
            allowed[1] = 0.0
        pipelined = bool(s_pipe.options[_draw(p_probs, allowed, rng, s_pipe.key)])

        s_unroll = sites[f"loop{lp.id}.unroll"]
        u_probs = softmax_probs(s_unroll.logits)
        allowed = np.ones(len(s_unroll.options))
        if pipelined and isinstance(lp.bound, int):
            for i, f in enumerate(s_unroll.options):
                if f == lp.bound:
                    allowed[i] = 0.0
        unroll = int(s_unroll.options[_draw(u_probs, allowed, rng, s_unroll.key)])

        ii = None
        if pipelined:
            s_ii = sites[f"loop{lp.id}.ii"]
            ii_probs = softmax_probs(s_ii.logits)
            ii = int(s_ii.options[_draw(ii_probs, np.ones(len(s_ii.options)), rng, s_ii.key)])
        loops.append(LoopSetting(unroll=unroll, pipelined=pipelined, ii=ii))

    partitions: list[tuple[str, int]] = []
    for a in space.arrays:
        s = sites[f"array.{a.name}.partition"]
        probs = softmax_probs(s.logits)
        choice = s.options[_draw(probs, np.ones(len(s.options)), rng, s.key)]
        partitions.append((str(choice[0]), int(choice[1])))

    inlines: list[bool] = []
    for fn in space.functions:
        if not fn.inlinable:
            inlines.append(False)
            continue
        s = sites[f"func.{fn.name}.inline"]
        probs = softmax_probs(s.logits)
        inlines.append(bool(s.options[_draw(probs, np.ones(2), rng, s.key)]))

    return PragmaConfig(tuple(loops), tuple(partitions), tuple(inlines))


def canonicalize(config: PragmaConfig, space: DesignSpace) -> PragmaConfig:
    """Normalize masked fields: ii of unpipelined loops becomes None, loops
    under a pipelined ancestor are forced to full unroll, partition factor 1
    collapses to none, and non-inlinable functions are never inlined."""
    if len(config.loops) != len(space.loops):
        raise ConfigError(
            f"config has {len(config.loops)} loops, space declares {len(space.loops)}"
        )
    if len(config.partitions) != len(space.arrays):
        raise ConfigError("config partition count does not match space arrays")
    if len(config.inlines) != len(space.functions):
        raise ConfigError("config inline count does not match space functions")
    loops: list[LoopSetting] = []
    for lp in space.loops:
        setting = config.loops[lp.id]
        forced = any(loops[a].pipelined for a in space.ancestors(lp.id))
        if forced:
            if lp.bound == VARIABLE:
                raise ConfigError(
                    f"loop {lp.id}: pipelined ancestor forces a full unroll of a variable bound"
                )
            loops.append(LoopSetting(unroll=int(lp.bound), pipelined=False, ii=None))
        elif setting.pipelined:
            loops.append(LoopSetting(setting.unroll, True, setting.ii))
        else:
            loops.append(LoopSetting(setting.unroll, False, None))
    partitions = tuple(
        ("none", 1) if p[1] == 1 else (p[0], p[1]) for p in config.partitions
    )
    inlines = tuple(
        bool(v) and fn.inlinable for v, fn in zip(config.inlines, space.functions)
    )
    return PragmaConfig(tuple(loops), partitions, inlines)


def validate_config(config: PragmaConfig, space: DesignSpace) -> None:
    """Check a canonicalized config against the space and rules R1-R3."""
    cfg = canonicalize(config, space)
    for lp in space.loops:
        setting = cfg.loops[lp.id]
        forced = any(cfg.loops[a].pipelined for a in space.ancestors(lp.id))
        if forced:
            continue
        if setting.unroll not in lp.unroll_options:
            raise ConfigError(f"loop {lp.id}: unroll {setting.unroll} not offered")
        if setting.pipelined:
            if isinstance(lp.bound, int) and setting.unroll == lp.bound:
                raise ConfigError(f"loop {lp.id}: pipelining with a full unroll (R2)")
            if space.has_variable_descendant(lp.id):
                raise ConfigError(f"loop {lp.id}: pipelining over a variable-bound descendant (R3)")
            if setting.ii not in lp.ii_options:
                raise ConfigError(f"loop {lp.id}: ii {setting.ii} not offered")
    for a, p in zip(space.arrays, cfg.partitions):
        if p == ("none", 1):
            continue
        if p[0] not in a.partition_types or p[1] not in a.partition_factors:
            raise ConfigError(f"array {a.name}: partition {p} not offered")


def canonical_key(config: PragmaConfig, space: DesignSpace) -> str:
    """Stable string key; configs differing only in masked fields collide."""
    cfg = canonicalize(config, space)
    parts = []
    for j, s in enumerate(cfg.loops):
        ii = "-" if s.ii is None else str(s.ii)
        parts.append(f"L{j}:u{s.unroll},p{int(s.pipelined)},ii{ii}")
    for a, p in zip(space.arrays, cfg.partitions):
        tag = "none" if p == ("none", 1) else f"{p[0]}{p[1]}"
        parts.append(f"A:{a.name}={tag}")
    for fn, v in zip(space.functions, cfg.inlines):
        parts.append(f"F:{fn.name}={int(v)}")
    return "|".join(parts)


def config_to_dict(config: PragmaConfig) -> dict:
    return {
        "loops": [
            {"unroll": s.unroll, "pipelined": s.pipelined, "ii": s.ii} for s in config.loops
        ],
        "partitions": [[p[0], p[1]] for p in config.partitions],
        "inlines": [bool(v) for v in config.inlines],
    }


def config_from_dict(d: dict) -> PragmaConfig:
    try:
        loops = tuple(
            LoopSetting(int(s["unroll"]), bool(s["pipelined"]), None if s["ii"] is None else int(s["ii"]))
            for s in d["loops"]
        )
        partitions = tuple((str(p[0]), int(p[1])) for p in d["partitions"])
        inlines = tuple(bool(v) for v in d["inlines"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config dict: {exc}") from exc
    return PragmaConfig(loops, partitions, inlines)
