"""Single-loop regularized Q-learning with linear function approximation."""
