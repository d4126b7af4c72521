"""Desk-scale SIEM closed loop for critical-infrastructure monitoring.

Subpackages cover the stages of the loop: grammar-driven collection
(:mod:`siemflow.collector`), rule correlation (:mod:`siemflow.correlation`),
policy conflict handling (:mod:`siemflow.policies`, :mod:`siemflow.ahp`),
firewall reachability analysis (:mod:`siemflow.reachability`),
threshold-signed alarm storage (:mod:`siemflow.storage`), and the
hydroelectric-dam demo scenario (:mod:`siemflow.dam`). The command line
front end lives in :mod:`siemflow.cli`.
"""

from siemflow.events import (
    Alarm,
    Endpoint,
    MalformedEvent,
    NormalizedEvent,
    deserialize_alarm,
    deserialize_event,
    serialize_alarm,
    serialize_event,
)

__all__ = [
    "Alarm",
    "Endpoint",
    "MalformedEvent",
    "NormalizedEvent",
    "deserialize_alarm",
    "deserialize_event",
    "serialize_alarm",
    "serialize_event",
]

__version__ = "0.1.0"
