"""Plane-wave power Doppler beamforming toolkit.

Five image-formation pipelines (coherent compounding, FMAS, sub-aperture
correlation, sub-aperture FMAS, and suppressor-gated SAMAS) over a shared
delay-and-sum front end, plus a synthetic RF channel-data simulator, clutter
filters, quality metrics, and a per-stage timing harness.
"""

__version__ = "0.1.0"

from .acquisition import (AcquisitionConfig, ChannelDataSet, FormatError,
                          ImageGrid, ROI, desk_config, read_config_file,
                          read_dataset, validate_config, write_config_file,
                          write_dataset)
from .beamformer import (AnalyticImageStack, ApodizationSpec, analytic_signal,
                         beamform_stack, das_beamform)
from .clutter import (RollingWindow, SvdThresholds, cutoff_velocity,
                      filter_channel_data, rolling_cutoff_frequency,
                      rolling_frequency_response, rolling_subtraction,
                      svd_filter, svd_knee_heuristic, tgc_equalize,
                      window_for_cutoff)
from .compounding import (PowerImage, am_combine, coherent_compound,
                          fmas_compound, power_doppler)
from .metrics import (compute_cnr, compute_snr, export_image, export_mask,
                      line_profile, to_gray)
from .pipelines import (PIPELINES, MetricsReport, PipelineOptions,
                        StageTiming, TimingReport, bench, reproduce_tables,
                        run_pipeline, simulate_named_scene)
from .simulator import (PhantomScene, PulseSpec, Scatterer, advance_scene,
                        built_in_scene, read_scene, required_sample_count,
                        synthesize_am_triplet, synthesize_sequence,
                        synthesize_transmit, write_scene)
from .subaperture import (AperturePattern, CorrelationImage, SuppressorMask,
                          asap_correlate, asap_fmas, asap_power,
                          grating_lobe_directions, samas, sidelobe_suppressor,
                          split_aperture)
