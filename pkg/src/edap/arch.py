"""Shared architectural vocabulary: privilege modes, engine placements, requesters."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Privilege(Enum):
    PROBLEM = "problem"
    SUPERVISOR = "supervisor"
    HYPERVISOR = "hypervisor"


class Placement(Enum):
    """Where the data encryption engine sits in the datapath."""

    BASELINE = "baseline"  # no engine; reference configuration
    FU_ENCLAVE = "fu_enclave"
    FU_ENCLAVE_BUFFERED = "fu_enclave_buffered"
    CLEARTEXT_REGFILE = "cleartext_regfile"
    CLEARTEXT_L1 = "cleartext_l1"


EDAP_PLACEMENTS = (
    Placement.FU_ENCLAVE,
    Placement.FU_ENCLAVE_BUFFERED,
    Placement.CLEARTEXT_REGFILE,
    Placement.CLEARTEXT_L1,
)


@dataclass(frozen=True)
class FootprintConfig:
    """Selected placement plus the local-buffer capacity where one exists."""

    placement: Placement
    buffer_entries: int = 16

    def __post_init__(self):
        if self.placement is Placement.FU_ENCLAVE_BUFFERED and self.buffer_entries < 1:
            raise ValueError("buffered placement needs at least one buffer entry")


@dataclass(frozen=True)
class Requester:
    """Who is asking: hardware thread id and current privilege."""

    thread_id: int
    privilege: Privilege
