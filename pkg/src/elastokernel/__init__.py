"""Heat kernels and Green functions of elliptic systems on polygons.

Modules: ``domain`` (polygons, meshes), ``elasticity`` (tensors, rigid
modes), ``assembly`` (P1 operators, Korn constants), ``linalg`` (sparse
symmetric solvers and dense oracles), ``parabolic`` (time stepping),
``kernel`` (mollified heat kernel and its estimates), ``green`` (Green
function) and ``harness`` (config runner and CLI).
"""
__version__ = "0.1.0"
