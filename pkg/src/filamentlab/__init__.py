"""filamentlab: numerical laboratory for binormal-flow filaments with corners.

Submodules
----------
geometry        curves, frames, frame-ODE integrators, alignment
selfsimilar     the one-parameter family of self-similar solutions
hasimoto        filament function, pseudo-conformal transform, reconstruction
nls             spectral solver for the singular NLS family, norms, wave operator
binormal        flow trajectories by two routes and their diagnostics
trace_series    the tangent trace at the singular time by three routes
continuation    extension through t=0 by the rotation construction
linear_weighted numerical study of the linearized equation in weighted spaces
cli             batch command-line frontend
"""

__version__ = "0.1.0"
