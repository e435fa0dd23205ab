from .compress import compress, verify_contraction
from .consensus import (chatter_band, coupling, delay_threshold, finite_time_bound, first_hit,
                        gossip_round, simulate_consensus, sync_index)
from .graph import (adjacency_matrix, build_topology, dump_topology, jacobi_eigenvalues, laplacian,
                    load_topology, metropolis_weights, nonlinear_weight_matrix, spectral_summary,
                    stable_rate, unweighted_laplacian)
from .objective import (batch_gradient, estimate_noise, full_gradient, global_gradient, global_loss,
                        load_dataset, make_logistic, make_quadratic, objectives_from_dataset,
                        partition_data, problem_constants, quadratic_from_centers, solve_optimum,
                        stochastic_gradient)
from .optimize import (descent_residuals, evaluate_bound, make_schedule, run_centralized,
                       run_compressed_ngo, run_gossip_sgd, run_local_sgd, run_ngo_sgd,
                       sync_parameter, weighted_average_iterate)
