"""photonserver: end-to-end simulation and real-time qualification of a
single-atom cavity photon source operated as a photon server."""

__version__ = "0.1.0"

from .clickstream import (Click, ClickFormatError, ClickOrderError, ClickStream,
                          PulseSchedule, WindowedClicks, read_clicks,
                          window_clicks, write_clicks)
from .correlator import (CorrelationHistogram, VisibilityReport,
                         correlate_counts, cross_correlate_binned,
                         cross_correlate_fine,
                         expected_background_coincidences, visibility)
from .qed import (IntegrationError, PulseShape, QedParams, Trajectory,
                  build_model, emission_probability, fit_coupling_scale,
                  propagate, pure_state_density, validate_density)
from .qualifier import (Notification, Phase, QualifierConfig, RunVerdict,
                        ServerState, derive_loss_threshold, fold, loss_test,
                        qualification_test, qualified_segment_periods, replay,
                        step)
from .simulator import (RunTruth, SimConfig, sample_lifetimes,
                        simulate_run, single_atom_availability)
