"""Full and degree-lumped mean-field and pair-approximation solvers for contact processes on networks."""

from .binning import BinSearchConfig, build_dendrogram, choose_bins, proxy_error_F
from .degree import DegreeDistribution, delta, from_file, parse_dist_spec, powerlaw, uniform
from .errors import ModelParseError, NetlumpError, NumericalError, ResourceLimitError, ValidationError
from .lumping import Partition, bin_stats
from .model import ContactModel, format_model, load_model, parse_model
from .solver import InitSpec, Trajectory, integrate, make_system, parse_init_spec, solve, total_error

__version__ = "0.1.0"
