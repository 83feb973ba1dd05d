"""Fixed-step dq-frame time-domain simulator."""
from .models import (
    EquilibriumError,
    GfmPlantModel,
    IdealisticMode,
    LoadSolution,
    SimModel,
    build_classical_machine,
    build_droop_gfm,
    build_idvs,
    current_loop_gains,
    solve_with_load,
)
from .simulate import (
    POINTS,
    DisturbanceEvent,
    Perturbation,
    SimConfig,
    SimulationDiverged,
    TimeSeries,
    measure_pq,
    simulate,
)
