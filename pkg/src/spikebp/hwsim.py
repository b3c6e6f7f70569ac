"""Cycle-level simulator of the event-driven spiking accelerator pipeline.

Each layer engine scans its latched input spike vector with a priority
encoder, consuming one active presynaptic index per clock cycle; the
fetched weight row is accumulated onto all postsynaptic membrane
registers in that same cycle (postsynaptic parallelism is free). After
the last index, a fixed bias+fire phase adds the bias, fires every
neuron, and (step-reset) clears or (carry-reset) decrements the
membranes. A final handshake cycle deposits the output frame downstream
and raises `done`.

Per-step layer overhead is therefore latch(1) + bias_fire(2, config) +
handshake(1) = 4 cycles by default, plus one cycle per active input.

Layers are pipelined with single-slot inter-layer buffers: a layer may
begin time step t only once its upstream neighbour has signalled done
for step t (a frame is waiting in its inbox) and its downstream
neighbour has fetched step t-1 (its outbox slot is empty). Inbox slots
are never overwritten while occupied; the simulator asserts both
invariants every cycle and raises on deadlock instead of spinning.

The functional result is bit-exact with the integer reference models in
`quant`; published latency/energy figures for real silicon are not
reproduced here: cycle counts follow only the event-driven scaling
behaviour, and energy is a user-calibrated linear activity model.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, SimulationError, ValidationError
from .quant import ACC_LIMIT

PHASE_IDLE = "idle"
PHASE_INTEGRATE = "integrating"
PHASE_BIAS_FIRE = "bias_fire"
PHASE_HANDSHAKE = "handshake"

LATCH_CYCLES = 1
HANDSHAKE_CYCLES = 1
DEFAULT_BIAS_FIRE_CYCLES = 2


@dataclass
class SchedulerState:
    """Priority-encoder scan state over one binary spike vector."""

    spike_vector: np.ndarray
    cursor: int = 0


def priority_encode_next(state):
    """Lowest set index >= cursor, advancing past it; None when exhausted.

    One invocation models one scheduler cycle.
    """
    vec = state.spike_vector
    remaining = np.flatnonzero(vec[state.cursor:])
    if remaining.size == 0:
        state.cursor = len(vec)
        return None
    idx = state.cursor + int(remaining[0])
    state.cursor = idx + 1
    return idx


@dataclass
class EnergyCoefficients:
    """Linear activity-model coefficients (illustrative defaults, nJ/event).

    These are user-supplied calibration knobs, not measured silicon.
    """

    row_fetch_nj: float = 0.10
    accumulate_nj: float = 0.001
    fire_check_nj: float = 0.002
    idle_nj: float = 0.005
    frequency_mhz: float = 163.0

    def __post_init__(self):
        for name in ("row_fetch_nj", "accumulate_nj", "fire_check_nj", "idle_nj",
                     "frequency_mhz"):
            if getattr(self, name) < 0:
                raise ValidationError(f"energy coefficient {name} must be >= 0")


@dataclass
class ActivityCounters:
    """Per-run activity tallies, one slot per layer."""

    n_layers: int
    total_cycles: int = 0
    weight_row_fetches: np.ndarray = None
    accumulate_ops: np.ndarray = None
    fire_checks: np.ndarray = None
    stall_cycles: np.ndarray = None
    idle_cycles: np.ndarray = None
    active_counts: list = field(default_factory=list)  # per layer: list per step

    def __post_init__(self):
        for name in ("weight_row_fetches", "accumulate_ops", "fire_checks",
                     "stall_cycles", "idle_cycles"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.n_layers, np.int64))
        if not self.active_counts:
            self.active_counts = [[] for _ in range(self.n_layers)]


class LayerEngine:
    """One pipelined layer: serial presynaptic scan, parallel postsynaptic
    accumulate, fixed-cost bias/fire, handshake out."""

    def __init__(self, layer_id, qlayer, kind, counters,
                 bias_fire_cycles=DEFAULT_BIAS_FIRE_CYCLES):
        if kind not in ("dc", "ct"):
            raise ValidationError(f"engine kind must be dc/ct, got {kind!r}")
        self.layer_id = layer_id
        self.qlayer = qlayer
        self.kind = kind
        self.counters = counters
        self.bias_fire_cycles = bias_fire_cycles
        self.membrane = np.zeros(qlayer.n_out, np.int64)
        self.phase = PHASE_IDLE
        self.scheduler = None
        self.step_index = None
        self._bias_fire_left = 0
        self.output_frame = None

    def latch(self, step_index, frame):
        if len(frame) != self.qlayer.n_in:
            raise DimensionError(
                f"layer {self.layer_id}: frame width {len(frame)} != fan-in "
                f"{self.qlayer.n_in}"
            )
        self.step_index = step_index
        self.scheduler = SchedulerState(np.asarray(frame, np.uint8))
        self.counters.active_counts[self.layer_id].append(int(frame.sum()))
        self.phase = PHASE_INTEGRATE

    def cycle(self):
        """Advance one clock; returns (progressed, trace_detail)."""
        if self.phase == PHASE_INTEGRATE:
            idx = priority_encode_next(self.scheduler)
            if idx is None:
                # exhausted: this cycle becomes the first bias_fire cycle
                self.phase = PHASE_BIAS_FIRE
                self._bias_fire_left = self.bias_fire_cycles
                return self._bias_fire_cycle()
            self.membrane += self.qlayer.weights_q[:, idx].astype(np.int64)
            self.counters.weight_row_fetches[self.layer_id] += 1
            self.counters.accumulate_ops[self.layer_id] += self.qlayer.n_out
            return True, f"integrate idx={idx}"
        if self.phase == PHASE_BIAS_FIRE:
            return self._bias_fire_cycle()
        if self.phase == PHASE_HANDSHAKE:
            # the pipeline pops output_frame and returns us to idle
            return True, "handshake"
        return False, "idle"

    def _bias_fire_cycle(self):
        self._bias_fire_left -= 1
        if self._bias_fire_left > 0:
            return True, "bias_fire"
        # final bias_fire cycle: add bias, evaluate threshold, reset
        v = self.membrane + self.qlayer.bias_q
        if np.any(np.abs(v) >= ACC_LIMIT):
            neuron = int(np.argwhere(np.abs(v) >= ACC_LIMIT)[0][0])
            raise NumericError(
                f"layer {self.layer_id} step {self.step_index}: accumulator "
                f"overflow at neuron {neuron}"
            )
        spikes = (v > self.qlayer.theta_q).astype(np.uint8)
        self.counters.fire_checks[self.layer_id] += self.qlayer.n_out
        self.potentials = v
        if self.kind == "dc":
            self.membrane = np.zeros_like(self.membrane)
        else:
            self.membrane = v - self.qlayer.theta_q * spikes.astype(np.int64)
        self.output_frame = spikes
        self.phase = PHASE_HANDSHAKE
        return True, "bias_fire(final)"


@dataclass
class SimResult:
    outputs: np.ndarray  # (T, n_out) uint8 final-layer spikes
    output_potentials: np.ndarray  # (T, n_out) int64 final-layer pre-reset v
    counters: ActivityCounters
    trace: list = None


class PipelineSim:
    """Single-slot handshaked pipeline over a quantized layer stack."""

    def __init__(self, qmodel, bias_fire_cycles=DEFAULT_BIAS_FIRE_CYCLES):
        self.qmodel = qmodel
        self.counters = ActivityCounters(n_layers=len(qmodel.layers))
        self.engines = [
            LayerEngine(i, ql, qmodel.kind, self.counters, bias_fire_cycles)
            for i, ql in enumerate(qmodel.layers)
        ]
        self.overhead = LATCH_CYCLES + bias_fire_cycles + HANDSHAKE_CYCLES

    def run(self, frames, collect_trace=False):
        """Simulate T input frames through the pipeline cycle by cycle."""
        frames = np.asarray(frames, np.uint8)
        if frames.ndim != 2 or frames.shape[1] != self.qmodel.n_in:
            raise DimensionError(
                f"expected frames (T, {self.qmodel.n_in}), got {frames.shape}"
            )
        T = frames.shape[0]
        n_layers = len(self.engines)
        # inbox[l] feeds engine l; inbox[n_layers] is the output slot
        inbox = [None] * (n_layers + 1)
        next_input = 0
        outputs = np.zeros((T, self.qmodel.n_out), np.uint8)
        potentials = np.zeros((T, self.qmodel.n_out), np.int64)
        collected = 0
        trace = [] if collect_trace else None
        recent = []
        cycle = 0

        while collected < T:
            cycle += 1
            progressed = False
            events = []

            if inbox[0] is None and next_input < T:
                inbox[0] = (next_input, frames[next_input])
                next_input += 1
                progressed = True
                events.append((cycle, -1, "inject", f"step={inbox[0][0]}"))

            for li in range(n_layers - 1, -1, -1):
                engine = self.engines[li]
                if engine.phase == PHASE_HANDSHAKE:
                    if inbox[li + 1] is not None:
                        raise SimulationError(
                            f"cycle {cycle}: inbox of layer {li + 1} written while "
                            f"occupied"
                        )
                    inbox[li + 1] = (engine.step_index, engine.output_frame)
                    if li == n_layers - 1:
                        outputs[engine.step_index] = engine.output_frame
                        potentials[engine.step_index] = engine.potentials
                    engine.phase = PHASE_IDLE
                    engine.output_frame = None
                    progressed = True
                    events.append((cycle, li, PHASE_HANDSHAKE,
                                   f"done step={engine.step_index}"))
                    continue
                if engine.phase == PHASE_IDLE:
                    if inbox[li] is not None:
                        if inbox[li + 1] is None:
                            step, frame = inbox[li]
                            inbox[li] = None  # data_fetched to upstream
                            engine.latch(step, frame)
                            progressed = True
                            events.append((cycle, li, "latch", f"step={step}"))
                        else:
                            # upstream done, downstream not fetched: stall
                            self.counters.stall_cycles[li] += 1
                            self.counters.idle_cycles[li] += 1
                            events.append((cycle, li, PHASE_IDLE, "stall"))
                    else:
                        self.counters.idle_cycles[li] += 1
                        events.append((cycle, li, PHASE_IDLE, ""))
                    continue
                did, detail = engine.cycle()
                progressed = progressed or did
                events.append((cycle, li, engine.phase, detail))

            if inbox[n_layers] is not None:
                inbox[n_layers] = None  # sink always fetches promptly
                collected += 1
                progressed = True

            if trace is not None:
                trace.extend(events)
            recent = (recent + events)[-64:]
            if not progressed:
                lines = "\n".join(
                    f"  cycle {c} layer {l} {p} {d}" for c, l, p, d in recent
                )
                raise SimulationError(
                    f"pipeline deadlock at cycle {cycle} with "
                    f"{T - collected} steps outstanding; recent trace:\n{lines}"
                )

        self.counters.total_cycles = cycle
        return SimResult(outputs=outputs, output_potentials=potentials,
                         counters=self.counters, trace=trace)


def pipeline_simulate(qmodel, frames, collect_trace=False,
                      bias_fire_cycles=DEFAULT_BIAS_FIRE_CYCLES):
    """Convenience wrapper: one PipelineSim run over (T, n_in) frames."""
    return PipelineSim(qmodel, bias_fire_cycles).run(frames, collect_trace)


def serialized_cycle_count(counters, overhead):
    """Cycles the same work would take with no pipeline overlap."""
    total = 0
    for li in range(counters.n_layers):
        steps = len(counters.active_counts[li])
        total += int(counters.weight_row_fetches[li]) + overhead * steps
    return total


def write_trace(trace, path):
    """One line per cycle event: cycle, layer, phase, detail."""
    with open(path, "w") as f:
        f.write("cycle\tlayer\tphase\tdetail\n")
        for cycle, layer, phase, detail in trace:
            f.write(f"{cycle}\t{layer}\t{phase}\t{detail}\n")


def report_sparsity(counters, fan_ins, steps):
    """Fraction of active presynaptic inputs per layer plus the aggregate.

    fan_ins are per-layer input widths; steps is the number of time steps
    each layer processed. Row fetches are exactly the number of active
    inputs consumed, so fraction = fetches / (fan_in * steps).
    """
    fan_ins = np.asarray(fan_ins)
    if len(fan_ins) != counters.n_layers:
        raise DimensionError(
            f"{len(fan_ins)} fan-ins for {counters.n_layers} layers"
        )
    per_layer = counters.weight_row_fetches / (fan_ins * steps)
    aggregate = float(counters.weight_row_fetches.sum() / (fan_ins * steps).sum())
    return {"per_layer": per_layer, "aggregate": aggregate}


@dataclass
class EnergyReport:
    total_nj: float
    per_layer_nj: np.ndarray
    wall_time_us: float


def estimate_energy(counters, coeffs):
    """Linear activity model: dot(counters, coefficients) + wall time."""
    per_layer = (
        counters.weight_row_fetches * coeffs.row_fetch_nj
        + counters.accumulate_ops * coeffs.accumulate_nj
        + counters.fire_checks * coeffs.fire_check_nj
        + counters.idle_cycles * coeffs.idle_nj
    ).astype(np.float64)
    wall_us = counters.total_cycles / coeffs.frequency_mhz
    return EnergyReport(
        total_nj=float(per_layer.sum()),
        per_layer_nj=per_layer,
        wall_time_us=float(wall_us),
    )
