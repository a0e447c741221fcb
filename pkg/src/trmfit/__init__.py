"""Traffic Reaction Model schemes and gradient-based flux-parameter estimation."""
