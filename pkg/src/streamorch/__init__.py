"""Deterministic stream-processing runtime simulator with a pluggable orchestration layer.

The runtime side (:mod:`streamorch.runtime`) models jobs, PEs, hosts and metric
traces on a discrete-event clock. The orchestration side registers event
subscopes (:mod:`streamorch.scope`), receives epoch-tagged events
(:mod:`streamorch.delivery`), acts on the runtime through
:class:`~streamorch.orchestrator.OrcaService` and manages application
dependencies (:mod:`streamorch.dependencies`). Scenarios replay all of it from
JSON files and write a byte-stable event log.
"""

from .dependencies import AppConfig, DependencyManager
from .errors import OrcaError
from .eventlog import EventLog, EventLogRecord
from .orchestrator import OrcaService, Orchestrator
from .runtime import MetricTrace, Simulator
from .scope import EventKind, Subscope
from .topology import TopologyDescriptor, load_topology

__all__ = [
    "AppConfig",
    "DependencyManager",
    "EventKind",
    "EventLog",
    "EventLogRecord",
    "MetricTrace",
    "OrcaError",
    "OrcaService",
    "Orchestrator",
    "Simulator",
    "Subscope",
    "TopologyDescriptor",
    "load_topology",
]

__version__ = "0.1.0"
