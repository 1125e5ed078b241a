"""Online coefficient identification for nonlinear parabolic problems."""
