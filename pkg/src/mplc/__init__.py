"""Multi-plane light conversion projectors designed by wavefront matching."""
from .field import ComplexField, GridSpec, PhaseMask, apply_phase, inner_product, normalize, power
from .modes import ModeSpec, Superposition, gaussian, hg_mode, lg_mode, mode_field, superpose
from .propagation import backward_pass, forward_pass, propagate
from .wfm import ConverterDesign, WfmConfig, conversion_overlap, design_converter, fiber_target

__version__ = "0.1.0"
