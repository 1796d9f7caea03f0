"""Ready-made driven-cavity setups shared by the CLI and the tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import FlowSystem, assemble_cavity, assemble_robin_boundary, robin_shape
from .control import ControlConfig, ControlOperators, assemble_control
from .mesh import BoundarySegment, CavityMesh, DofMap

__all__ = ["CavitySetup", "ROBIN_SEGMENT", "setup_cavity"]

# actuated piece of the bottom wall, blowing into the cavity
ROBIN_SEGMENT = BoundarySegment((0.4, 0.0), (0.6, 0.0))
ROBIN_DIRECTION = (0.0, 1.0)


@dataclass(eq=False)
class CavitySetup:
    mesh: CavityMesh
    dm: DofMap
    v_gamma: np.ndarray
    sys: FlowSystem
    ctrl: ControlOperators | None


def setup_cavity(N, control="distributed", cfg: ControlConfig | None = None) -> CavitySetup:
    """Assemble the cavity with ``control`` in ``{"none", "distributed", "robin"}``.

    Robin mode makes the bottom-wall segment an actuated boundary.  The
    pressure is then determined by the system and is left unpinned.
    """
    if control not in ("none", "distributed", "robin"):
        raise ValueError(f"unknown control mode {control!r}")
    if control == "robin":
        mesh, dm, vg, full, sys = assemble_cavity(N, pin_pressure=False, robin=ROBIN_SEGMENT)
        rb = assemble_robin_boundary(mesh, dm, ROBIN_SEGMENT, [robin_shape], [ROBIN_DIRECTION])
        ctrl = assemble_control(mesh, dm, cfg, pinned=False, with_input=False, robin=rb)
    else:
        mesh, dm, vg, full, sys = assemble_cavity(N)
        ctrl = None
        if control == "distributed":
            ctrl = assemble_control(mesh, dm, cfg)
    return CavitySetup(mesh, dm, vg, sys, ctrl)
