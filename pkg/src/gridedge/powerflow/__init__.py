from .solver import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    InjectionVector,
    VoltageProfile,
    feasibility_envelope,
    feeder_quantities,
    line_losses,
    power_mismatch,
    solve_fixed_point,
)
