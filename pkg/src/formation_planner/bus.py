"""Message types carried on the in-process swarm bus."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class StateReport:
    """Encoded position, obstacle distance and corridor of one UAV."""

    data: bytes


@dataclass(frozen=True)
class GuidanceBroadcast:
    """Encoded assignment and waypoint paths from the leader."""

    data: bytes


@dataclass(frozen=True)
class TrajectoryShare:
    trajectory: object  # mppi.Trajectory


@dataclass(frozen=True)
class BusMessage:
    sender: int
    cycle: int
    payload: object
