"""Comparison schemes: MTR turn restrictions, VC separation, ITB stations."""

from .itb import ItbStation
from .mtr import (
    ChannelDependencyGraph,
    SynthesisError,
    TurnRestrictionSet,
    build_cdg,
    load_restrictions,
    save_restrictions,
    synthesize_restrictions,
)
from .vcsep import vcsep_vc_range

__all__ = [
    "ChannelDependencyGraph",
    "ItbStation",
    "SynthesisError",
    "TurnRestrictionSet",
    "build_cdg",
    "load_restrictions",
    "save_restrictions",
    "synthesize_restrictions",
    "vcsep_vc_range",
]
