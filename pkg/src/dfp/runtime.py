"""Full-stack assembly and the scenario runner.

The runner owns the wiring between layers, so every measurement travels
the long way round: the scenario feeds the radar device, the acquisition
node stamps a frame, abstraction normalizes it, ingestion files it in the
environment store, the planner reads it back and the controller's output
is published on the command topic, where the runner picks it up and
integrates the plant. Application nodes only ever touch SDK surfaces.

Node bodies resolve through the algorithm registry. Entries of the form
``builtin:<name>`` bind to the builders below; anything else is imported
as ``module:attribute`` and called with the node to produce a body.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from dfp import ConfigurationError, RuntimeFault
from dfp.acc import Collision, desired_gap, lead_speed_at, plant_step, simulate
from dfp.config import SystemConfig
from dfp.envmodel import EnvStore
from dfp.funcsw import AlgorithmRegistry, TaskGraph, build_graph
from dfp.hal import DeviceRegistry, normalize
from dfp.middleware import Domain, History, QoSProfile, Reliability, TopicDescriptor
from dfp.modemgr import Coordinator, StartGroup, StopGroup
from dfp.util import canonical_json, clamp

log = logging.getLogger("dfp.runtime")


# -- builtin node bodies --------------------------------------------------------


def _builtin_radar_acquire(stack: "Stack", node):
    handle = stack.hal.handle(node.config["device_id"])
    out_topic = node.outputs[0]
    in_topic = node.inputs[0]

    def body(inputs, config):
        return {out_topic: handle.stamp(inputs[in_topic])}

    return body


def _builtin_normalize(stack: "Stack", node):
    out_topic = node.outputs[0]
    in_topic = node.inputs[0]

    def body(inputs, config):
        return {out_topic: normalize(inputs[in_topic])}

    return body


def _builtin_env_ingest(stack: "Stack", node):
    out_topic = node.outputs[0]
    in_topic = node.inputs[0]

    def body(inputs, config):
        record_id = stack.env.ingest(inputs[in_topic])
        return {out_topic: {"record_id": record_id}}

    return body


def _builtin_acc_planner(stack: "Stack", node):
    cfg = stack.config.acc.config if stack.config.acc else None
    if cfg is None:
        raise ConfigurationError(
            f"node {node.node_id!r} needs the acc config section")
    lead_topic, odom_topic = node.inputs
    out_topic = node.outputs[0]

    def body(inputs, config):
        record = stack.env.read(inputs[lead_topic]["record_id"])
        gap = record.attributes["range_m"]
        closing = record.attributes["range_rate_mps"]  # v_lead - v_ego
        v_ego = inputs[odom_topic]["speed_mps"]
        target = desired_gap(cfg, v_ego)
        accel_raw = cfg.kp * (gap - target) + cfg.kv * closing
        return {out_topic: {"gap_m": gap, "desired_gap_m": target,
                            "accel_raw": accel_raw}}

    return body


def _builtin_acc_controller(stack: "Stack", node):
    cfg = stack.config.acc.config if stack.config.acc else None
    if cfg is None:
        raise ConfigurationError(
            f"node {node.node_id!r} needs the acc config section")
    in_topic = node.inputs[0]
    out_topic = node.outputs[0]

    def body(inputs, config):
        accel = clamp(inputs[in_topic]["accel_raw"], cfg.accel_min, cfg.accel_max)
        return {out_topic: {"accel_mps2": accel}}

    return body


BUILTIN_BODIES = {
    "builtin:radar_acquire": _builtin_radar_acquire,
    "builtin:normalize": _builtin_normalize,
    "builtin:env_ingest": _builtin_env_ingest,
    "builtin:acc_planner": _builtin_acc_planner,
    "builtin:acc_controller": _builtin_acc_controller,
}


@dataclass
class RunResult:
    metrics: dict
    trajectory: list = field(default_factory=list)
    fault: str | None = None

    @property
    def ok(self) -> bool:
        return self.fault is None

    def metrics_json(self) -> str:
        return canonical_json(self.metrics) + "\n"


class Stack:
    """Every layer assembled from one validated system config."""

    def __init__(self, config: SystemConfig, seed: int | None = None):
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.domain = Domain()
        self.platform = self.domain.create_participant("platform")
        self.hal = DeviceRegistry()
        for descriptor in config.devices:
            self.hal.register_device(descriptor)
        self.env = EnvStore()
        self.registry = AlgorithmRegistry()
        for descriptor in config.algorithms:
            builder = BUILTIN_BODIES.get(descriptor.entry)
            if builder is not None:
                factory = (lambda b: lambda node: b(self, node))(builder)
            else:
                factory = None  # resolved as module:attribute on demand
            self.registry.register(descriptor, factory)
        self.graph: TaskGraph | None = None
        self.coordinator: Coordinator | None = None
        self._publishers = {}
        self._monitors = {}
        if config.nodes:
            self.graph = build_graph(config.nodes, config.groups,
                                     registry=self.registry,
                                     external_topics=config.topic_names())
            for gid, policy in config.groups.items():
                if policy.binding_label:
                    self.graph.bind(gid, policy.binding_label)
        monitor_qos = QoSProfile(Reliability.BEST_EFFORT, History.keep_last(64))
        for topic in config.topics:
            self._publishers[topic.name] = self.platform.create_publisher(topic)
            self._monitors[topic.name] = self.platform.create_subscriber(
                TopicDescriptor(topic.name, topic.type_hash, monitor_qos))
        if self.graph is not None:
            managed = self._fsm_managed_groups()
            self.graph.start(groups=[g for g in config.groups if g not in managed])
            self.coordinator = Coordinator(group_controller=self.graph)
            if config.fsms:
                self.coordinator.load(config.fsms)
        self._fsm_dispatches = 0
        self._fired_counts = {nid: 0 for nid in (self.graph.nodes if self.graph else ())}
        self._max_elapsed = {nid: 0.0 for nid in self._fired_counts}

    def _fsm_managed_groups(self) -> set:
        """Groups any FSM action references; their start/stop is mode-driven."""
        managed = set()
        for fsm in self.config.fsms:
            for t in fsm.transitions:
                for action in t.actions:
                    if isinstance(action, (StartGroup, StopGroup)):
                        managed.add(action.group_id)
        return managed

    # -- driving -----------------------------------------------------------------

    def dispatch(self, fsm_id: str, event: str):
        self._fsm_dispatches += 1
        return self.coordinator.dispatch(fsm_id, event)

    def _bridge_round(self, report) -> None:
        """Publish declared topics a round produced, then collect monitors."""
        for topic, value in report.produced.items():
            pub = self._publishers.get(topic)
            if pub is not None:
                payload = json.dumps(
                    value.as_dict() if hasattr(value, "as_dict") else value,
                    sort_keys=True).encode()
                pub.publish(payload)
        for nid in report.fired:
            self._fired_counts[nid] = self._fired_counts.get(nid, 0) + 1
            elapsed = report.elapsed_ms.get(nid, 0.0)
            if elapsed > self._max_elapsed.get(nid, 0.0):
                self._max_elapsed[nid] = elapsed

    def _take_command(self, topic: str):
        monitor = self._monitors.get(topic)
        if monitor is None:
            return None
        samples = monitor.take()
        accel = None
        for sample in samples:
            accel = json.loads(sample.data.decode())["accel_mps2"]
            sample.release()
        return accel

    def _drain_monitors(self, exclude=()) -> None:
        for name, monitor in self._monitors.items():
            if name in exclude:
                continue
            for sample in monitor.take():
                sample.release()

    def run_scenario(self, duration: float | None = None,
                     event_schedule: dict | None = None) -> RunResult:
        """Drive the plant through the full stack, one round per dt step.

        ``event_schedule`` maps a step index to mode events dispatched
        before that step's round; engage events from the config run at
        step 0.
        """
        setup = self.config.acc
        if setup is None:
            return RunResult(metrics=self._metrics(trajectory=None))
        scenario = setup.scenario
        schedule = {k: list(v) for k, v in (event_schedule or {}).items()}
        schedule[0] = list(setup.engage_events) + schedule.get(0, [])

        # the world feeds the first external input of the acquisition stage;
        # the command topic is the declared control/* topic (see config docs)
        world_topic = next((n.inputs[0] for n in self.config.nodes
                            if n.stage.name == "ACQUISITION" and n.inputs), "world/radar")
        command_topic = next((t.name for t in self.config.topics
                              if t.name.startswith("control/")), None)

        dt = scenario.dt
        steps = round(scenario.duration / dt) if duration is None else round(duration / dt)
        ego_x, ego_v = scenario.ego.position, scenario.ego.speed
        lead_x = scenario.lead.position
        trajectory = []
        fault = None
        try:
            for k in range(steps + 1):
                t = k * dt
                for fsm_id, event in schedule.get(k, ()):
                    self.dispatch(fsm_id, event)
                v_lead = lead_speed_at(scenario.lead_profile, t)
                gap = lead_x - ego_x
                raw = {"range_km": gap / 1000.0,
                       "range_rate_mps": v_lead - ego_v,
                       "azimuth_rad": 0.0}
                report = self.graph.step({
                    world_topic: raw,
                    "vehicle/odometry": {"speed_mps": ego_v},
                })
                self._bridge_round(report)
                self.domain.clock.advance(int(round(dt * 1e9)))
                self.domain.spin()
                accel = self._take_command(command_topic)
                self._drain_monitors(exclude={command_topic})
                if accel is None:
                    accel = 0.0  # control group silent: coast
                trajectory.append({
                    "t": t, "ego_position": ego_x, "ego_speed": ego_v,
                    "lead_position": lead_x, "lead_speed": v_lead,
                    "gap": gap, "command": accel,
                })
                if gap <= 0:
                    raise Collision(t, gap)
                if k == steps:
                    break
                ego_x, ego_v = plant_step(ego_x, ego_v, accel, dt)
                lead_x = lead_x + v_lead * dt
        except RuntimeFault as exc:
            fault = f"{type(exc).__name__}: {exc}"
            log.error("scenario fault: %s", fault)
        return RunResult(metrics=self._metrics(trajectory, fault),
                         trajectory=trajectory, fault=fault)

    # -- metrics ------------------------------------------------------------------

    def _metrics(self, trajectory=None, fault: str | None = None) -> dict:
        topics = {}
        for name in sorted(self._publishers):
            monitor = self._monitors[name]
            topics[name] = {
                "published": self._publishers[name].published_count,
                "delivered": monitor.delivered_count,
                "dropped": monitor.drops_overflow + monitor.drops_gap,
            }
        nodes = {}
        for nid in sorted(self._fired_counts):
            nodes[nid] = {
                "fired": self._fired_counts[nid],
                "restarts": self.graph.restart_count_of(nid) if self.graph else 0,
                "max_elapsed_ms": self._max_elapsed[nid],
            }
        odds = {}
        for name, query in self.config.odds:
            if name not in self.env.odd_names():
                self.env.save_odd(name, query)
            odds[name] = len(self.env.run_odd(name))
        acc_summary = None
        if trajectory:
            cfg = self.config.acc.config
            last = trajectory[-1]
            acc_summary = {
                "steps": len(trajectory),
                "min_gap_m": round(min(p["gap"] for p in trajectory), 9),
                "final_gap_error_m": round(
                    abs(last["gap"] - desired_gap(cfg, last["ego_speed"])), 9),
                "collided": fault is not None and "Collision" in fault,
            }
        return {
            "seed": self.seed,
            "config_sha256": self.config.sha256,
            "topics": topics,
            "nodes": nodes,
            "fsm": {
                "dispatches": self._fsm_dispatches,
                "trace_len": len(self.coordinator.trace) if self.coordinator else 0,
                "mode": self.coordinator.snapshot() if self.coordinator else {},
            },
            "odds": odds,
            "acc": acc_summary,
            "fault": fault,
        }


def reference_trajectory(config: SystemConfig, dt: float | None = None):
    """Direct closed-loop re-integration of the configured scenario.

    Independent of the stack path: no devices, transport, store or graph,
    just the control law against the same plant. Serves as the oracle the
    end-to-end run is compared with.
    """
    setup = config.acc
    if setup is None:
        raise ConfigurationError("config has no acc section")
    return simulate(setup.scenario, setup.config, dt=dt)
