"""Heat-map-guided Monte Carlo tree search for the 2-D Euclidean TSP."""

from .heatmap import (HeatMap, SurrogateProvider, UniformProvider, complete_heatmap,
                      load_heatmap, prune_unpromising, surrogate_heatmap, uniform_heatmap,
                      write_heatmap)
from .instance import (Instance, InstanceFormatError, brute_force_optimum, generate_instance,
                       greedy_nearest_neighbor, read_instance, read_tour, tour_length,
                       validate_tour, write_instance, write_tour)
from .mcts import Params, SolveResult, solve
from .sampling import build_global_heatmap

__version__ = "0.1.0"
