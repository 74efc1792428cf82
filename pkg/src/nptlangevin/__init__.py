"""Langevin samplers for the NPT ensemble of periodic particle systems.

The barostat degree of freedom is the log-volume of a cubic box; four
stochastic integrators (one second-order splitting, three first-order
schemes) target the isothermal-isobaric measure, with a constant-volume
companion stepper for thermodynamic-integration references.
"""

from .core import (CellRescaling, CustomFriction, LambdaForm, NoiseStream,
                   PhysicalParams, SystemState, minimum_image,
                   reduced_coordinates, wrap_positions)
from .forcefields import (ForceFieldOutput, FreeGas, LennardJones,
                          QuarticBump, evaluate, instantaneous_pressure,
                          kinetic_energy, v_dh_dv)
from .harness import (ExperimentConfig, convergence_study,
                      distribution_distance, exact_free_gas_density,
                      histogram, nvt_pressure_scan, replicate_terminal,
                      run_trajectory, thermodynamic_integration,
                      weak_order_fit)
from .integrators import (SchemeKind, StepFailure, StepKernel, barostat_full,
                          drift_half, kick_half, make_stepper, step_em,
                          step_nvt, step_second_order, step_thirds,
                          step_trotter, thermostat_half)
from .observables import (ObservableRecord, StreamingMoments, record,
                          virial_errors)

__version__ = "0.1.0"
