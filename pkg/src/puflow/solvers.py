"""Sparse direct solves, Newton iteration and the implicit time loop.

Nonlinear systems are solved by Newton-Raphson with optional reuse of
the factorized Jacobian (Shamanskii-style): the residual is always
fresh, the factorization is refreshed every ``jacobian_reuse_count``
iterations or when the iteration stalls. Time integration uses BDF(2)
with a backward-Euler bootstrap on the first step.
"""

import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import assemble_ns_residual, assemble_ns_jacobian

BDF1 = (1.0, -1.0, 0.0)
BDF2 = (1.5, -2.0, 0.5)


class SolverError(Exception):
    pass


class NonConvergedError(SolverError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class NewtonConfig:
    """Newton-Raphson settings.

    tol: absolute tolerance on the residual l2 norm. max_iter: hard
    iteration cap. jacobian_reuse_count: factorizations are kept for
    this many iterations (1 = fresh Jacobian every iteration).
    """

    def __init__(self, tol=1e-6, max_iter=30, jacobian_reuse_count=1):
        if tol <= 0 or max_iter < 1:
            raise ValueError("invalid Newton configuration")
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.jacobian_reuse_count = int(jacobian_reuse_count)


def describe_dof(layout, gdof):
    """Human-readable identity of a global DOF (block, node, component)."""
    g = int(gdof)
    if layout.has_embedded and g >= layout.off_pe:
        return "pressure[embedded] node %d" % (g - layout.off_pe)
    if g >= layout.off_pb:
        return "pressure[background] node %d" % (g - layout.off_pb)
    if layout.has_embedded and g >= layout.off_ve:
        node, comp = layout.ve.node_component(g - layout.off_ve)
        return "velocity[embedded] node %d comp %d" % (node, comp)
    node, comp = layout.vb.node_component(g - layout.off_vb)
    return "velocity[background] node %d comp %d" % (node, comp)


class SparseFactor:
    """Reusable LU factorization handle."""

    def __init__(self, matrix, layout=None):
        self.shape = matrix.shape
        matrix = matrix.tocsc()
        try:
            self._lu = spla.splu(matrix)
        except RuntimeError as exc:
            msg = str(exc)
            detail = ""
            empty = np.nonzero(np.diff(matrix.tocsr().indptr) == 0)[0]
            if len(empty):
                detail = " (empty row: %s)" % (
                    describe_dof(layout, empty[0]) if layout is not None
                    else ("dof %d" % empty[0]))
            raise SolverError("singular system: %s%s" % (msg, detail))

    def solve(self, rhs):
        return self._lu.solve(rhs)


def solve_sparse(matrix, rhs, layout=None):
    """Direct sparse solve; returns (solution, factorization handle)."""
    factor = SparseFactor(matrix, layout=layout)
    return factor.solve(rhs), factor


def newton_solve(state, x0, config=None, factor=None, log=None):
    """Newton-Raphson on the scene residual.

    Returns (x, info) where info carries the residual history, the
    number of factorizations and the final factorization handle (for
    cross-step reuse). ``factor`` seeds the iteration with an existing
    Jacobian factorization.
    """
    config = config or NewtonConfig()
    x = np.asarray(x0, dtype=float).copy()
    history = []
    nfact = 0
    age = config.jacobian_reuse_count  # force factorization if none cached
    if factor is not None:
        age = 0
    for it in range(config.max_iter):
        R = assemble_ns_residual(state, x)
        rnorm = float(np.linalg.norm(R))
        history.append(rnorm)
        if log is not None:
            log.append((it, rnorm))
        if rnorm < config.tol:
            return x, {"iterations": it, "history": history,
                       "factorizations": nfact, "factor": factor}
        stalled = len(history) >= 2 and rnorm > 0.8 * history[-2]
        if factor is None or age >= config.jacobian_reuse_count or stalled:
            J = assemble_ns_jacobian(state, x)
            factor = SparseFactor(J, layout=state.layout)
            factor.matrix = J
            nfact += 1
            age = 0
        dx = factor.solve(-R)
        x += dx
        age += 1
    raise NonConvergedError(
        "Newton did not converge in %d iterations (residual %.3e)"
        % (config.max_iter, history[-1]), history)


class TimeLoopState:
    """Serializable state of the implicit time loop."""

    def __init__(self, t=0.0, step=0, x=None, hist1=None, hist2=None,
                 extra=None):
        self.t = float(t)
        self.step = int(step)
        self.x = x
        self.hist1 = hist1
        self.hist2 = hist2
        self.extra = dict(extra or {})
        self.jac_matrix = None       # reused Jacobian (restart support)
        self.jac_age = 0

    def save(self, path):
        arrays = {"t": np.array(self.t), "step": np.array(self.step),
                  "x": self.x, "hist1": self.hist1, "hist2": self.hist2}
        if self.jac_matrix is not None:
            J = self.jac_matrix.tocsc()
            arrays["jac_data"] = J.data
            arrays["jac_indices"] = J.indices
            arrays["jac_indptr"] = J.indptr
            arrays["jac_age"] = np.array(self.jac_age)
        for k, v in self.extra.items():
            arrays["extra_" + k] = np.asarray(v)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path):
        data = np.load(path, allow_pickle=False)
        extra = {k[6:]: data[k] for k in data.files if k.startswith("extra_")}
        out = cls(t=float(data["t"]), step=int(data["step"]),
                  x=data["x"], hist1=data["hist1"], hist2=data["hist2"],
                  extra=extra)
        if "jac_data" in data.files:
            n = len(data["jac_indptr"]) - 1
            out.jac_matrix = sp.csc_matrix(
                (data["jac_data"], data["jac_indices"],
                 data["jac_indptr"]), shape=(n, n))
            out.jac_age = int(data["jac_age"])
        return out


def bdf_coefficients(step):
    """Backward-Euler bootstrap, BDF(2) afterwards (1-based step index)."""
    return BDF1 if step <= 1 else BDF2


def time_loop(scenario, dt, t_end, config=None, on_step=None,
              start_state=None, max_steps=None):
    """Run the implicit time loop of a scenario.

    The scenario provides:

    * ``initial()`` -> (SceneState, x0, TimeLoopState extras)
    * ``advance(scene, loop_state, t_new)`` -> SceneState for t_new
      (moved meshes, rebuilt overlap/constraints, boundary data)
    * ``outputs(scene, loop_state)`` -> dict of scalars for the series
    * ``static_geometry`` -> bool (Jacobian reuse across steps)

    Returns (rows, loop_state).
    """
    config = config or NewtonConfig(jacobian_reuse_count=5)
    scene, x0, extras = scenario.initial()
    loop = start_state or TimeLoopState(
        t=0.0, step=0, x=x0, hist1=x0.copy(), hist2=x0.copy(),
        extra=extras)
    rows = []
    factor = None
    steps_since_fact = 0
    if start_state is not None and start_state.jac_matrix is not None:
        factor = SparseFactor(start_state.jac_matrix)
        factor.matrix = start_state.jac_matrix
        steps_since_fact = start_state.jac_age
    n_steps = int(round((t_end - loop.t) / dt))
    if max_steps is not None:
        n_steps = min(n_steps, max_steps)
    static = getattr(scenario, "static_geometry", False)
    for k in range(n_steps):
        t_new = loop.t + dt
        step_new = loop.step + 1
        hist1 = loop.x.copy()
        hist2 = loop.hist1.copy()
        scene = scenario.advance(scene, loop, t_new)
        scene.dt = dt
        scene.bdf = bdf_coefficients(step_new)
        scene.hist1 = hist1
        scene.hist2 = hist2
        # linear predictor: good initial iterate once history exists
        x_guess = loop.x if step_new <= 1 else 2.0 * hist1 - hist2
        if not static:
            factor = None        # geometry or constraints changed
        elif steps_since_fact >= config.jacobian_reuse_count:
            factor = None
        try:
            x, info = newton_solve(scene, x_guess, config, factor=factor)
        except NonConvergedError as exc:
            raise SolverError(
                "step %d (t=%.4f) failed: %s" % (step_new, t_new, exc))
        if info["factorizations"]:
            steps_since_fact = 0
        steps_since_fact += 1
        factor = info["factor"]
        if factor is not None and hasattr(factor, "matrix"):
            loop.jac_matrix = factor.matrix
        loop.jac_age = steps_since_fact
        loop.x = x
        loop.hist1 = hist1
        loop.hist2 = hist2
        loop.t = t_new
        loop.step = step_new
        row = {"t": t_new}
        row.update(scenario.outputs(scene, loop))
        rows.append(row)
        if on_step is not None:
            on_step(scene, loop, row)
    return rows, loop
