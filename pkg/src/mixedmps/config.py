"""Declarative simulation configs (YAML).

A config is one YAML document::

    name: fermion-dephasing          # output directory name
    definitions:                     # optional; DSL strings or numbers,
      gamma: 1.0                     # resolvable in later definitions
      hamiltonian: "-1 * sum(i=1..7, dag(C)(i)C(i+1) + dag(C)(i+1)C(i))"
    phases:
      - create_state:
          rep: mixed                 # pure | mixed
          system: {n: 8, kind: fermion}
          state: ["Emp", "Occ", ...] # one name or a per-site list, or
          # graph: {complete: true} / {edges: [[1,2], [2,3]]}
      - evolve:
          duration: 4
          time_step: 0.05
          order: 4                   # 1 | 2 | 4 (default 4)
          variant: WII               # WI | WII (default WII)
          evolver: "-1i*hamiltonian + sum(i=1..8, Dissipator(sqrt(4*gamma)*N(i)))"
          limits: {cutoff: 1.0e-30, maxdim: 100}
          measure_period: 1
          measures:
            - file: density.dat
              observables: ["N"]
      - gates: {name: "...", gates: "...", limits: {...}, final_measures: [...]}
      - to_mixed: {}
      - partial_trace: {keep: [1, 2]}
      - repeat: {times: 20, phases: [...]}

DSL strings are quoted; site kinds are ``qubit``, ``fermion`` and ``boson``
(the latter with ``dim``).  Operator names resolve against the built-in
table of the system's site kinds plus the ``definitions``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .measure import MeasureError, MeasureSpec, parse_measure
from .ops import OpExpr, name_table
from .parser import ParseError, parse
from .sites import FERMION, QUBIT, Site, boson
from .state import Rep, System
from .tensor import TruncationLimits


class ConfigError(ValueError):
    """Schema violation or unresolvable name in a config file."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


def _site_from_spec(spec: Any, where: str) -> Site:
    if isinstance(spec, str):
        kind = spec.lower()
        if kind == "qubit":
            return QUBIT
        if kind == "fermion":
            return FERMION
        if kind == "boson":
            raise ConfigError(where, "boson sites need a dim, e.g. {kind: boson, dim: 5}")
        raise ConfigError(where, f"unknown site kind {spec!r}")
    if isinstance(spec, dict):
        kind = str(spec.get("kind", "")).lower()
        if kind == "boson":
            dim = spec.get("dim")
            if not isinstance(dim, int) or dim < 2:
                raise ConfigError(where, "boson dim must be an integer >= 2")
            return boson(dim)
        if kind in ("qubit", "fermion"):
            return _site_from_spec(kind, where)
        raise ConfigError(where, f"unknown site kind {spec!r}")
    raise ConfigError(where, f"bad site spec {spec!r}")


def parse_system(spec: Any, where: str) -> System:
    if isinstance(spec, dict) and "n" in spec:
        n = spec["n"]
        if not isinstance(n, int) or n < 1:
            raise ConfigError(where, "system n must be a positive integer")
        site = _site_from_spec(
            {k: v for k, v in spec.items() if k != "n"} if "kind" in spec else spec.get("kind"),
            where,
        )
        return System.uniform(n, site)
    if isinstance(spec, list):
        return System(tuple(_site_from_spec(s, f"{where}[{i}]") for i, s in enumerate(spec)))
    raise ConfigError(where, f"bad system spec {spec!r}")


def _limits_from_spec(spec: Any, where: str) -> TruncationLimits:
    if spec is None:
        return TruncationLimits()
    if not isinstance(spec, dict):
        raise ConfigError(where, "limits must be a mapping with cutoff/maxdim")
    kwargs = {}
    if "cutoff" in spec:
        kwargs["cutoff"] = float(spec["cutoff"])
    if "maxdim" in spec:
        kwargs["maxdim"] = int(spec["maxdim"])
    extra = set(spec) - {"cutoff", "maxdim"}
    if extra:
        raise ConfigError(where, f"unknown limit keys {sorted(extra)}")
    try:
        return TruncationLimits(**kwargs)
    except ValueError as exc:
        raise ConfigError(where, str(exc)) from None


@dataclass(frozen=True)
class MeasureFile:
    filename: str
    specs: tuple[MeasureSpec, ...]


@dataclass(frozen=True)
class CreateStatePhase:
    rep: Rep
    system: System
    state_names: tuple[str, ...] | None = None
    graph_edges: tuple[tuple[int, int], ...] | None = None
    limits: TruncationLimits = TruncationLimits()


@dataclass(frozen=True)
class ToMixedPhase:
    pass


@dataclass(frozen=True)
class EvolvePhase:
    duration: float
    time_step: float
    order: int
    variant: str
    evolver_text: str
    evolver: OpExpr
    limits: TruncationLimits
    measure_period: int
    measures: tuple[MeasureFile, ...]


@dataclass(frozen=True)
class GatesPhase:
    name: str
    gates_text: str
    gates: OpExpr
    limits: TruncationLimits
    final_measures: tuple[MeasureFile, ...]


@dataclass(frozen=True)
class PartialTracePhase:
    keep: tuple[int, ...]


Phase = CreateStatePhase | ToMixedPhase | EvolvePhase | GatesPhase | PartialTracePhase


@dataclass(frozen=True)
class SimConfig:
    name: str
    source_path: Path | None
    source_text: str
    definitions: dict[str, object]
    phases: tuple[Phase, ...]
    system: System  # from the create phase; measures / evolvers resolve on it


def _parse_measure_files(spec: Any, context, where: str, seen: set[str]) -> tuple[MeasureFile, ...]:
    if spec is None:
        return ()
    if not isinstance(spec, list):
        raise ConfigError(where, "measures must be a list of {file, observables}")
    out = []
    for k, entry in enumerate(spec):
        w = f"{where}[{k}]"
        if not isinstance(entry, dict) or "file" not in entry:
            raise ConfigError(w, "each measure entry needs a 'file' key")
        fname = str(entry["file"])
        if fname in seen:
            raise ConfigError(w, f"duplicate measure file {fname!r}")
        seen.add(fname)
        obs = entry.get("observables")
        if not isinstance(obs, list) or not obs:
            raise ConfigError(w, "each measure entry needs a nonempty 'observables' list")
        specs = []
        for j, text in enumerate(obs):
            try:
                specs.append(parse_measure(str(text), context))
            except (ParseError, MeasureError) as exc:
                raise ConfigError(f"{w}.observables[{j}]", str(exc)) from None
        out.append(MeasureFile(fname, tuple(specs)))
    return tuple(out)


def _expand_phases(raw: Any, where: str) -> list[tuple[str, dict, str]]:
    """Flatten repeat groups into a linear phase list."""
    if not isinstance(raw, list) or not raw:
        raise ConfigError(where, "phases must be a nonempty list")
    out = []
    for k, entry in enumerate(raw):
        w = f"{where}[{k}]"
        if not isinstance(entry, dict) or len(entry) != 1:
            raise ConfigError(w, "each phase is a single-key mapping")
        kind, body = next(iter(entry.items()))
        body = body or {}
        if kind == "repeat":
            times = body.get("times")
            if not isinstance(times, int) or times < 1:
                raise ConfigError(w, "repeat needs a positive integer 'times'")
            inner = _expand_phases(body.get("phases"), f"{w}.phases")
            out.extend(inner * times)
        else:
            out.append((kind, body, w))
    return out


def load_config(path: str | Path) -> SimConfig:
    """Load and validate a simulation config; parses all DSL eagerly."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"YAML error: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    name = doc.get("name")
    if not isinstance(name, str) or not name.strip():
        raise ConfigError("name", "config needs a nonempty 'name'")
    unknown = set(doc) - {"name", "definitions", "phases"}
    if unknown:
        raise ConfigError(str(path), f"unknown top-level keys {sorted(unknown)}")

    raw_phases = _expand_phases(doc.get("phases"), "phases")
    if raw_phases[0][0] != "create_state":
        raise ConfigError("phases[0]", "the first phase must be create_state")
    system = parse_system(raw_phases[0][1].get("system"), "phases[0].system")

    context: dict[str, object] = dict(name_table(system.sites))
    defs = doc.get("definitions") or {}
    if not isinstance(defs, dict):
        raise ConfigError("definitions", "definitions must be a mapping")
    for dname, dval in defs.items():
        if isinstance(dval, (int, float)):
            context[dname] = complex(dval)
        elif isinstance(dval, str):
            try:
                context[dname] = parse(dval, context)
            except ParseError as exc:
                raise ConfigError(f"definitions.{dname}", str(exc)) from None
        else:
            raise ConfigError(f"definitions.{dname}", "definitions are strings or numbers")

    seen_files: set[str] = set()
    phases: list[Phase] = []
    for idx, (kind, body, w) in enumerate(raw_phases):
        if kind == "create_state":
            if idx != 0:
                raise ConfigError(w, "create_state must be the first phase")
            rep_s = str(body.get("rep", "")).lower()
            if rep_s not in ("pure", "mixed"):
                raise ConfigError(f"{w}.rep", "rep must be 'pure' or 'mixed'")
            rep = Rep.PURE if rep_s == "pure" else Rep.MIXED
            graph = body.get("graph")
            names = body.get("state")
            if (graph is None) == (names is None):
                raise ConfigError(w, "create_state takes exactly one of 'state' or 'graph'")
            edges = None
            state_names = None
            if graph is not None:
                if not all(s.kind == "Qubit" for s in system.sites):
                    raise ConfigError(w, "graph states need an all-qubit system")
                if graph.get("complete"):
                    edges = tuple(
                        (i, j)
                        for i in range(1, system.n + 1)
                        for j in range(i + 1, system.n + 1)
                    )
                else:
                    raw_edges = graph.get("edges")
                    if not isinstance(raw_edges, list):
                        raise ConfigError(f"{w}.graph", "graph needs 'edges' or 'complete: true'")
                    try:
                        edges = tuple((int(a), int(b)) for a, b in raw_edges)
                    except (TypeError, ValueError):
                        raise ConfigError(f"{w}.graph.edges", "edges are [i, j] pairs") from None
                    for a, b in edges:
                        if not (1 <= a <= system.n and 1 <= b <= system.n) or a == b:
                            raise ConfigError(f"{w}.graph.edges", f"bad edge ({a}, {b})")
            else:
                if isinstance(names, str):
                    state_names = tuple([names] * system.n)
                elif isinstance(names, list) and all(isinstance(x, str) for x in names):
                    if len(names) != system.n:
                        raise ConfigError(
                            f"{w}.state", f"{len(names)} names for {system.n} sites"
                        )
                    state_names = tuple(names)
                else:
                    raise ConfigError(f"{w}.state", "state is a name or a list of names")
            phases.append(
                CreateStatePhase(
                    rep,
                    system,
                    state_names,
                    edges,
                    _limits_from_spec(body.get("limits"), f"{w}.limits"),
                )
            )
        elif kind == "to_mixed":
            phases.append(ToMixedPhase())
        elif kind == "evolve":
            for key in ("duration", "time_step", "evolver", "limits"):
                if key not in body:
                    raise ConfigError(w, f"evolve needs '{key}'")
            order = body.get("order", 4)
            if order not in (1, 2, 4):
                raise ConfigError(f"{w}.order", "order must be 1, 2 or 4")
            variant = str(body.get("variant", "WII"))
            if variant not in ("WI", "WII"):
                raise ConfigError(f"{w}.variant", "variant must be WI or WII")
            period = body.get("measure_period", 1)
            if not isinstance(period, int) or period < 1:
                raise ConfigError(f"{w}.measure_period", "measure_period must be >= 1")
            try:
                evolver = parse(str(body["evolver"]), context)
            except ParseError as exc:
                raise ConfigError(f"{w}.evolver", str(exc)) from None
            if not isinstance(evolver, OpExpr):
                raise ConfigError(f"{w}.evolver", "evolver is a plain number")
            phases.append(
                EvolvePhase(
                    duration=float(body["duration"]),
                    time_step=float(body["time_step"]),
                    order=int(order),
                    variant=variant,
                    evolver_text=str(body["evolver"]),
                    evolver=evolver,
                    limits=_limits_from_spec(body["limits"], f"{w}.limits"),
                    measure_period=period,
                    measures=_parse_measure_files(
                        body.get("measures"), context, f"{w}.measures", seen_files
                    ),
                )
            )
        elif kind == "gates":
            if "gates" not in body or "limits" not in body:
                raise ConfigError(w, "gates needs 'gates' and 'limits'")
            try:
                gates = parse(str(body["gates"]), context)
            except ParseError as exc:
                raise ConfigError(f"{w}.gates", str(exc)) from None
            if not isinstance(gates, OpExpr):
                raise ConfigError(f"{w}.gates", "gates is a plain number")
            phases.append(
                GatesPhase(
                    name=str(body.get("name", f"gates[{idx}]")),
                    gates_text=str(body["gates"]),
                    gates=gates,
                    limits=_limits_from_spec(body["limits"], f"{w}.limits"),
                    final_measures=_parse_measure_files(
                        body.get("final_measures"), context, f"{w}.final_measures", seen_files
                    ),
                )
            )
        elif kind == "partial_trace":
            keep = body.get("keep")
            if not isinstance(keep, list) or not keep:
                raise ConfigError(f"{w}.keep", "partial_trace needs a nonempty keep list")
            try:
                keep_t = tuple(int(x) for x in keep)
            except (TypeError, ValueError):
                raise ConfigError(f"{w}.keep", "keep holds site numbers") from None
            phases.append(PartialTracePhase(keep_t))
        else:
            raise ConfigError(w, f"unknown phase kind {kind!r}")

    return SimConfig(
        name=name.strip(),
        source_path=path,
        source_text=text,
        definitions={k: v for k, v in (defs or {}).items()},
        phases=tuple(phases),
        system=system,
    )
