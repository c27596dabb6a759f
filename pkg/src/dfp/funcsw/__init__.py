"""Data-flow task orchestration: grouping, binding, configuration,
deterministic scheduling rounds and lifecycle management.

A ``TaskGraph`` is built from node declarations whose input ports bind to
topics. A node fires in a round only when every input port holds fresh
data; fired nodes execute in topological order (ties broken by node id)
and their outputs propagate within the same round. Firing consumes input
freshness. Failures (body faults or watchdog overruns) move a node to
FAILED and the group restart policy decides whether it comes back.
"""

from dfp.funcsw.types import (
    AlgorithmDescriptor,
    AlgorithmNotFound,
    BindingConflict,
    CycleDetected,
    DuplicateAlgorithm,
    DuplicateNodeId,
    FiringReport,
    GraphError,
    GroupPolicy,
    Lifecycle,
    NodeResult,
    PortSchemaMismatch,
    RestartPolicy,
    Stage,
    StageOrderViolation,
    StaticKeyWhileRunning,
    TaskNode,
    UnknownConfigKey,
    UnknownGroup,
    UnknownNode,
    UnresolvedInput,
)
from dfp.funcsw.registry import AlgorithmRegistry
from dfp.funcsw.graph import TaskGraph, build_graph

__all__ = [
    "AlgorithmDescriptor",
    "AlgorithmNotFound",
    "AlgorithmRegistry",
    "BindingConflict",
    "CycleDetected",
    "DuplicateAlgorithm",
    "DuplicateNodeId",
    "FiringReport",
    "GraphError",
    "GroupPolicy",
    "Lifecycle",
    "NodeResult",
    "PortSchemaMismatch",
    "RestartPolicy",
    "Stage",
    "StageOrderViolation",
    "StaticKeyWhileRunning",
    "TaskGraph",
    "TaskNode",
    "UnknownConfigKey",
    "UnknownGroup",
    "UnknownNode",
    "UnresolvedInput",
    "build_graph",
]
