"""Geodesic return-map analysis: self-focal points and poles on analytic surfaces."""

from .errors import (BlowUp, ConfigError, ExpressionError, InconclusiveProbe,
                     LeftAtlas, NonConvergent, NonHomeomorphism,
                     NonMonotoneSamples, NotInOverlap, NotUnit,
                     OrientationReversing, OutOfChart, PoleFinderError,
                     TooManyFixedPoints)
from .expressions import Expression
from .surfaces import (MetricJet, PhasePoint, SurfacePoint, SurfaceSpec,
                       angle_to_covector, covector_to_angle, hamiltonian,
                       metric_at, transition)
from .geodesic_flow import (CrossingEvent, FlowConfig, detect_fiber_returns,
                            hamilton_field, integrate, time_reverse, trajectory)
from .return_map import (CircleMapGrid, ReturnSample, SelfFocalReport,
                         build_return_map, loop_fraction, probe_self_focal)
from .circle_dynamics import (BasinReport, CircleMap, FixedPoint, FixedPointSet,
                              RotationEstimate, UlamDensity, birkhoff_basins,
                              build_lift, circle_distance, compose_square,
                              conjugated_rotation, conservativity_verdict,
                              fixed_points, identity_defect, orientation,
                              reversibility_defect, rotation_number, ulam_density)
from .classifier import (ClassifyConfig, ClosureReport, Verdict, classify_point,
                         sweep, verify_pole)

__version__ = "0.1.0"
