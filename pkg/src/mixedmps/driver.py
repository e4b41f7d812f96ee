"""Phase-by-phase execution of a simulation config.

Running a config creates ``out_root/<name>/`` containing one text file per
declared measure file, a ``log`` with per-phase timing and per-epoch bond
and trace diagnostics, and ``config.copy``, a verbatim copy of the input for
reproducibility.

Data file format: UTF-8 text, ``#`` header lines naming the run and columns,
then space-separated numeric rows.  Scalars emit ``t re im``; per-site
vectors emit ``t site re im``; matrices emit ``t i j re im``.  When a file
collects more than one observable, a 1-based observable index is inserted
after ``t``.  Evolve phases stamp rows with physical time; gates phases with
final measures advance an integer epoch counter instead.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import IO

import numpy as np

from .config import (
    ConfigError,
    CreateStatePhase,
    EvolvePhase,
    GatesPhase,
    MeasureFile,
    PartialTracePhase,
    SimConfig,
    ToMixedPhase,
)
from .evolve import EvolutionPlan, apply_gates, evolve, plan_gates
from .measure import evaluate_measure, maxlinkdim, trace_error
from .mpo import LoweringError, lower_evolver
from .state import Rep, State, StateError, graph_state, mix, partial_trace, product_state

log = logging.getLogger(__name__)


class RunError(RuntimeError):
    """A phase failed while executing."""


def _fmt(x: float) -> str:
    return f"{x:.15e}"


class _DataFile:
    def __init__(self, directory: Path, spec: MeasureFile, run_name: str):
        self.spec = spec
        self.path = directory / spec.filename
        self.handle: IO[str] = open(self.path, "w", encoding="utf-8")
        self.multi = len(spec.specs) > 1
        head = [f"# run: {run_name}", f"# file: {spec.filename}"]
        cols = "t" + (" obs" if self.multi else "")
        head.append("# observables: " + "; ".join(m.label for m in spec.specs))
        head.append(
            f"# columns: {cols} [site | i j] re im  (layout depends on the observable)"
        )
        self.handle.write("\n".join(head) + "\n")

    def write_epoch(self, t: float, state: State) -> None:
        for k, mspec in enumerate(self.spec.specs, start=1):
            shape, payload = evaluate_measure(state, mspec)
            prefix = [_fmt(t)] + ([str(k)] if self.multi else [])
            if shape == "scalar":
                v = complex(payload)
                if not (np.isfinite(v.real) and np.isfinite(v.imag)):
                    raise RunError(f"non-finite value for {mspec.label!r} at t={t}")
                self._row(prefix + [_fmt(v.real), _fmt(v.imag)])
            elif shape == "vector":
                for site, v in payload:
                    if v is None:
                        continue
                    v = complex(v)
                    if not (np.isfinite(v.real) and np.isfinite(v.imag)):
                        raise RunError(f"non-finite value for {mspec.label!r} at t={t}")
                    self._row(prefix + [str(site), _fmt(v.real), _fmt(v.imag)])
            else:  # matrix
                mat = payload
                if not np.all(np.isfinite(mat)):
                    raise RunError(f"non-finite value for {mspec.label!r} at t={t}")
                for i in range(mat.shape[0]):
                    for j in range(mat.shape[1]):
                        v = mat[i, j]
                        self._row(
                            prefix + [str(i + 1), str(j + 1), _fmt(v.real), _fmt(v.imag)]
                        )
        self.handle.flush()

    def _row(self, fields: list[str]) -> None:
        self.handle.write(" ".join(fields) + "\n")

    def close(self) -> None:
        self.handle.close()


def run(config: SimConfig, out_root: str | Path = ".") -> Path:
    """Execute all phases; returns the output directory."""
    out_dir = Path(out_root) / config.name
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.copy").write_text(config.source_text, encoding="utf-8")

    run_log = logging.getLogger(f"{__name__}.run")
    handler = logging.FileHandler(out_dir / "log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    run_log.addHandler(handler)
    run_log.setLevel(logging.INFO)

    state: State | None = None
    files: dict[str, _DataFile] = {}
    gate_epoch = 0

    def datafile(mf: MeasureFile) -> _DataFile:
        if mf.filename not in files:
            files[mf.filename] = _DataFile(out_dir, mf, config.name)
        return files[mf.filename]

    try:
        for pidx, phase in enumerate(config.phases):
            t0 = time.perf_counter()
            pname = type(phase).__name__
            if isinstance(phase, CreateStatePhase):
                if phase.graph_edges is not None:
                    state = graph_state(
                        phase.rep, phase.system.n, phase.graph_edges, phase.limits
                    )
                else:
                    state = product_state(phase.rep, phase.system, list(phase.state_names))
            elif isinstance(phase, ToMixedPhase):
                if state is None:
                    raise RunError("to_mixed before create_state")
                state = mix(state)
            elif isinstance(phase, EvolvePhase):
                if state is None:
                    raise RunError("evolve before create_state")
                try:
                    ts = lower_evolver(phase.evolver, state.system, state.rep)
                except LoweringError as exc:
                    raise RunError(f"phase {pidx}: {exc}") from None
                plan = EvolutionPlan(
                    evolver=ts,
                    duration=phase.duration,
                    time_step=phase.time_step,
                    order=phase.order,
                    variant=phase.variant,
                    limits=phase.limits,
                    measure_every=phase.measure_period,
                )
                outputs = [datafile(mf) for mf in phase.measures]

                def observer(st: State, t: float, step: int) -> None:
                    for f in outputs:
                        f.write_epoch(t, st)
                    terr = trace_error(st) if st.rep is Rep.MIXED else abs(st.norm() - 1.0)
                    run_log.info(
                        "evolve t=%.6f step=%d maxlinkdim=%d trace_err=%.3e",
                        t,
                        step,
                        maxlinkdim(st),
                        terr,
                    )

                state = evolve(state, plan, observer)
            elif isinstance(phase, GatesPhase):
                if state is None:
                    raise RunError("gates before create_state")
                try:
                    layer = plan_gates(phase.gates, state.system, state.rep, phase.limits)
                    state = apply_gates(state, layer)
                except (LoweringError, StateError) as exc:
                    raise RunError(f"phase {pidx} ({phase.name}): {exc}") from None
                if phase.final_measures:
                    gate_epoch += 1
                    for mf in phase.final_measures:
                        datafile(mf).write_epoch(float(gate_epoch), state)
                run_log.info(
                    "gates %r done, maxlinkdim=%d", phase.name, maxlinkdim(state)
                )
            elif isinstance(phase, PartialTracePhase):
                if state is None:
                    raise RunError("partial_trace before create_state")
                state = partial_trace(state, phase.keep)
            else:  # pragma: no cover
                raise RunError(f"unhandled phase {pname}")
            run_log.info(
                "phase %d (%s) finished in %.2fs", pidx, pname, time.perf_counter() - t0
            )
    except Exception:
        run_log.exception("run aborted")
        raise
    finally:
        for f in files.values():
            f.close()
        handler.close()
        run_log.removeHandler(handler)
    return out_dir


def run_config_file(path: str | Path, out_root: str | Path = ".") -> Path:
    from .config import load_config

    return run(load_config(path), out_root)
