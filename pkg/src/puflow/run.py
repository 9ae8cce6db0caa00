"""Scenario orchestration: configs in, CSV/VTK/JSON artifacts out."""

import csv
import json
import os
import time

import numpy as np

from . import bench
from .mesh import export_vtk, load_mesh
from .solvers import NewtonConfig, time_loop
from .quantities import compute_strouhal, boundary_flux, ProbeError
from .bench import global_flux_balance, support_table, solution_evaluator


class ConfigError(Exception):
    pass


def write_csv(path, rows, columns=None):
    if not rows:
        raise ValueError("no rows to write")
    columns = columns or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore",
                                lineterminator="\r\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(row.get(k, "")) if isinstance(
                row.get(k), float) else row.get(k, "") for k in columns})


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            rows.append({k: float(v) if _floaty(v) else v
                         for k, v in row.items()})
    return rows


def _floaty(v):
    try:
        float(v)
        return True
    except (TypeError, ValueError):
        return False


def write_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_jsonify)


def _jsonify(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def mesh_summary(scene):
    lay = scene.layout
    out = {"background": lay.bg.stats()}
    if lay.has_embedded:
        out["embedded"] = lay.em.stats()
        out["dofs"] = {
            "background": lay.vb.total_dofs + lay.pb.total_dofs,
            "embedded": lay.ve.total_dofs + lay.pe.total_dofs,
        }
    else:
        out["dofs"] = {"background": lay.total}
    return out


def snapshot(scene, x, outdir, base, index):
    lay = scene.layout
    ev = solution_evaluator(scene, x)
    verts = lay.bg.vertices
    vtot = ev.velocity(verts)
    ptot = ev.pressure(verts)
    export_vtk(lay.bg, {"velocity": vtot, "pressure": ptot},
               os.path.join(outdir, "%s_background_%04d.vtk"
                            % (base, index)))
    if lay.has_embedded:
        vb, ve, pb, pe = lay.split(x)
        ne = lay.ve.n_nodes
        nv = lay.em.n_vertices
        vel = np.stack([ve[:nv], ve[ne:ne + nv]], axis=-1)
        export_vtk(lay.em, {"velocity": vel, "pressure": pe[:nv]},
                   os.path.join(outdir, "%s_embedded_%04d.vtk"
                                % (base, index)))


def dump_overlap_vtk(scene, path):
    """Tertiary integration mesh as its own unstructured grid."""
    topo = scene.topo
    ns = topo.n_sub
    pts = topo.sub_verts.reshape(-1, 2)
    lines = ["# vtk DataFile Version 3.0", "tertiary mesh", "ASCII",
             "DATASET UNSTRUCTURED_GRID", "POINTS %d double" % (3 * ns)]
    lines.extend("%.17g %.17g 0" % (x, y) for x, y in pts)
    lines.append("CELLS %d %d" % (ns, 4 * ns))
    lines.extend("3 %d %d %d" % (3 * k, 3 * k + 1, 3 * k + 2)
                 for k in range(ns))
    lines.append("CELL_TYPES %d" % ns)
    lines.extend(["5"] * ns)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def dump_support_csv(scene, path):
    rows = [{"node": n, "side": s, "field": f, "E": e}
            for n, s, f, e in support_table(scene)]
    write_csv(path, rows, columns=["node", "side", "field", "E"])


def dump_system_mm(scene, x, path_prefix):
    import scipy.io
    from .assembly import assemble_ns_jacobian
    J = assemble_ns_jacobian(scene, x)
    scipy.io.mmwrite(path_prefix + "_matrix.mtx", J)


# ----------------------------------------------------------------------
# scenario runners
# ----------------------------------------------------------------------

def run_scenario(config, output_dir, steps=None, dump_overlap=False,
                 dump_system=False, dump_support=False,
                 midway_remesh=None, progress=print):
    """Execute a scenario config end to end; returns the summary dict."""
    if isinstance(config, str):
        with open(config) as fh:
            cfg = json.load(fh)
    else:
        cfg = dict(config)
    os.makedirs(output_dir, exist_ok=True)
    name = cfg.get("scenario")
    t0 = time.perf_counter()
    if name in ("stokes_cylinder", "ns_cylinder"):
        summary = _run_steady_cylinder(cfg, output_dir)
    elif name == "turek":
        summary = _run_turek(cfg, output_dir, steps, progress)
    elif name == "oscillating_cylinder":
        summary = _run_oscillating(cfg, output_dir, steps, progress)
    elif name == "valve":
        summary = _run_valve(cfg, output_dir, steps, midway_remesh,
                             progress)
    elif name == "convergence":
        summary = _run_convergence(cfg, output_dir, progress)
    else:
        raise ConfigError("unknown scenario %r" % name)
    summary["config"] = cfg
    summary["wall_time"] = time.perf_counter() - t0
    scene = summary.pop("_scene", None)
    x = summary.pop("_x", None)
    if scene is not None and x is not None:
        if dump_overlap and scene.layout.has_embedded:
            dump_overlap_vtk(scene, os.path.join(output_dir,
                                                 "overlap.vtk"))
        if dump_support and scene.layout.has_embedded:
            dump_support_csv(scene, os.path.join(output_dir,
                                                 "support.csv"))
        if dump_system:
            dump_system_mm(scene, x, os.path.join(output_dir, "system"))
    write_summary(os.path.join(output_dir, "summary.json"), summary)
    return summary


def _run_steady_cylinder(cfg, outdir):
    problem = "stokes" if cfg["scenario"] == "stokes_cylinder" else "ns"
    scene, x = bench.steady_cylinder_case(
        cfg.get("h", 0.1), mode=cfg.get("mode", "pufem"),
        pairing=cfg.get("pairing", "M1"), problem=problem,
        re=cfg.get("re", 30))
    snapshot(scene, x, outdir, cfg["scenario"], 0)
    total, inflow = global_flux_balance(scene, x)
    return {"mesh": mesh_summary(scene),
            "flux_balance": {"net": total, "inflow": inflow,
                             "relative": abs(total) / max(inflow, 1e-300)},
            "_scene": scene, "_x": x}


def _series_summary(rows, window=0.3):
    times = np.array([r["t"] for r in rows])
    out = {}
    sel = times >= times[-1] - window * (times[-1] - times[0])
    for key in rows[0]:
        if key == "t":
            continue
        arr = np.array([float(r[key]) for r in rows])
        out["max_" + key] = float(arr[sel].max())
        out["min_" + key] = float(arr[sel].min())
        out["final_" + key] = float(arr[-1])
    return out


def _run_turek(cfg, outdir, steps, progress):
    scen = bench.ChannelCylinderScenario(
        mode=cfg.get("mode", "pufem"), h_bg=cfg.get("h_bg", 0.015),
        h_em=cfg.get("h_em"), rho=cfg.get("rho", 1.0),
        mu=cfg.get("mu", 0.001))
    dt = cfg.get("dt", 0.01)
    t_end = cfg.get("t_end", 10.0)
    every = max(1, int(cfg.get("output_every", 100)))
    nc = NewtonConfig(tol=cfg.get("newton_tol", 1e-6),
                      jacobian_reuse_count=cfg.get("jacobian_reuse", 5))

    count = [0]

    def on_step(scene, loop, row):
        count[0] += 1
        if progress and count[0] % 50 == 0:
            progress("step %d t=%.2f cd=%.3f cl=%.3f" %
                     (loop.step, loop.t, row["cd"], row["cl"]))
        if count[0] % every == 0:
            snapshot(scene, loop.x, outdir, "turek", loop.step)

    rows, loop = time_loop(scen, dt, t_end, config=nc, on_step=on_step,
                           max_steps=steps)
    write_csv(os.path.join(outdir, "series.csv"), rows,
              columns=["t", "cd", "cl", "dp", "fd", "fl"])
    summary = {"mesh": mesh_summary(scen.scene()),
               "series": _series_summary(rows)}
    times = [r["t"] for r in rows]
    cls = [r["cl"] for r in rows]
    try:
        st = compute_strouhal(times, cls, 2 * bench.TUREK_RADIUS, 1.0)
        summary["strouhal"] = st
    except ProbeError as exc:
        summary["strouhal_error"] = str(exc)
    # pressure drop at the instant of maximum lift (last window) and at
    # the end of the run
    t_arr = np.asarray(times)
    sel = t_arr >= t_arr[-1] - 0.3 * (t_arr[-1] - t_arr[0])
    idx = np.nonzero(sel)[0]
    k = idx[int(np.argmax(np.asarray(cls)[idx]))]
    summary["dp_at_max_cl"] = rows[k]["dp"]
    summary["dp_at_end"] = rows[-1]["dp"]
    scene = scen.scene()
    total, inflow = global_flux_balance(scene, loop.x)
    summary["flux_balance"] = {"net": total, "inflow": inflow,
                               "relative": abs(total) / max(inflow, 1e-30)}
    summary["_scene"] = scene
    summary["_x"] = loop.x
    return summary


def _run_oscillating(cfg, outdir, steps, progress):
    mode = cfg.get("mode", "pufem")
    if mode == "pufem":
        scen = bench.OscillatingCylinderPufem(
            h_bg=cfg.get("h_bg", 0.02), h_em=cfg.get("h_em", 0.015),
            rho=cfg.get("rho", 1.0), mu=cfg.get("mu", 0.001))
    else:
        scen = bench.OscillatingCylinderClassical(
            h=cfg.get("h_bg", 0.02), rho=cfg.get("rho", 1.0),
            mu=cfg.get("mu", 0.001))
    dt = cfg.get("dt", 0.01)
    t_end = cfg.get("t_end", 2.0)
    nc = NewtonConfig(tol=cfg.get("newton_tol", 1e-6),
                      jacobian_reuse_count=cfg.get("jacobian_reuse", 4))

    count = [0]
    max_v = [0.0]

    def on_step(scene, loop, row):
        count[0] += 1
        lay = scene.layout
        vmax = float(np.abs(loop.x[:lay.off_pb]).max())
        max_v[0] = max(max_v[0], vmax)
        if progress and count[0] % 25 == 0:
            progress("step %d t=%.2f d=%.3f fd=%.4f" %
                     (loop.step, loop.t, row["d"], row["fd"]))
        if count[0] % int(cfg.get("output_every", 50)) == 0:
            snapshot(scene, loop.x, outdir, "osc", loop.step)

    last = {}

    def keep_last(scene, loop, row):
        on_step(scene, loop, row)
        last["scene"] = scene
        last["x"] = loop.x

    rows, loop = time_loop(scen, dt, t_end, config=nc, on_step=keep_last,
                           max_steps=steps)
    cols = ["t", "fd", "fl", "dp", "d"]
    if "min_quality" in rows[0]:
        cols.append("min_quality")
    write_csv(os.path.join(outdir, "series.csv"), rows, columns=cols)
    fd = np.array([r["fd"] for r in rows])
    dp = np.array([r["dp"] for r in rows])
    summary = {
        "series": _series_summary(rows),
        "rms_fd": float(np.sqrt(np.mean(fd ** 2))),
        "rms_dp": float(np.sqrt(np.mean(dp ** 2))),
        "max_velocity": max_v[0],
        "branch_continuity_gap": float(abs(
            bench.cylinder_displacement(1.0 - 1e-12)
            - bench.cylinder_displacement(1.0 + 1e-12))),
    }
    if last:
        scene = last["scene"]
        lay = scene.layout
        vb = lay.split(last["x"])[0]
        net = boundary_flux(lay.bg, lay.vb, vb)
        ends = max(abs(boundary_flux(lay.bg, lay.vb, vb,
                                     tags=["outflow"])), 1e-30)
        summary["flux_balance"] = {"net": net, "scale": ends,
                                   "relative": abs(net) / ends}
    return summary


def _run_valve(cfg, outdir, steps, midway_remesh, progress):
    from .valve import ValveFsiPufem, ValveFsiClassical
    mode = cfg.get("mode", "pufem")
    kw = dict(rho=cfg.get("rho", 1030.0), mu_f=cfg.get("mu_f", 3.0e-3),
              mu_s=cfg.get("mu_s", 20.0e3))
    remesh_t = midway_remesh if midway_remesh is not None \
        else cfg.get("midway_remesh")
    if mode == "pufem":
        driver = ValveFsiPufem(h_bg=cfg.get("h_bg", 0.0008), **kw)
    else:
        driver = ValveFsiClassical(h=cfg.get("h_bg", 0.0008),
                                   midway_remesh=remesh_t, **kw)
    dt = cfg.get("dt", 0.01)
    t_end = cfg.get("t_end", 1.0)
    n_steps = int(round(t_end / dt))
    if steps is not None:
        n_steps = min(n_steps, steps)
    x = np.zeros(driver.total)
    h1 = x.copy()
    h2 = x.copy()
    rows = []
    min_q = np.inf
    max_jerr = 0.0
    for k in range(1, n_steps + 1):
        t = k * dt
        if mode == "classical" and remesh_t is not None \
                and not driver.remeshed and t >= remesh_t - 1e-9:
            x, h1, h2 = driver.do_remesh(x, h1, h2)
        x_new, scene, info = driver.step(x, h1, h2, t, dt, k)
        h2 = h1
        h1 = x.copy()
        x = x_new
        out = driver.outputs(x, scene)
        out["t"] = t
        lay = scene.layout
        vb = lay.split(x)[0]
        net = bench.boundary_flux(lay.bg, lay.vb, vb)
        inflow = abs(bench.boundary_flux(lay.bg, lay.vb, vb,
                                         tags=["inflow"]))
        out["flux_net"] = net
        out["flux_inflow"] = inflow
        rows.append(out)
        min_q = min(min_q, out["min_quality"])
        if "j_err" in out:
            max_jerr = max(max_jerr, out["j_err"])
        if progress and k % 10 == 0:
            progress("step %d t=%.2f tip=(%.3f, %.3f) mm q=%.3f (%.1fs)"
                     % (k, t, out["tip_x"] * 1e3, out["tip_y"] * 1e3,
                        out["min_quality"], info["wall_time"]))
    write_csv(os.path.join(outdir, "tip.csv"), rows,
              columns=["t", "tip_x", "tip_y", "min_quality"]
              + (["j_err"] if "j_err" in rows[0] else []))
    nets = np.array([r["flux_net"] for r in rows])
    infl = np.array([r["flux_inflow"] for r in rows])
    active = infl > 0.1 * infl.max()
    summary = {
        "geometry": driver.geo.metadata(),
        "series": _series_summary(rows),
        "min_quality": float(min_q),
        "max_incompressibility_error": float(max_jerr),
        "steps_completed": len(rows),
        "flux_balance": {
            "max_relative": float(np.max(np.abs(nets[active])
                                         / infl[active]))
            if active.any() else 0.0},
    }
    return summary


def _run_convergence(cfg, outdir, progress):
    problem = cfg.get("problem", "stokes")
    re = cfg.get("re", 30)
    ref = bench.steady_cylinder_case(cfg.get("reference_h", 0.005),
                                     mode="classical", problem=problem,
                                     re=re)
    levels = cfg.get("levels", [0.1, 0.05, 0.025])
    out = {}
    for mode, pairing in (("classical", "M1"),
                          (cfg.get("mode", "pufem"),
                           cfg.get("pairing", "M1"))):
        tab = bench.convergence_study(
            levels, mode, problem=problem, re=re, pairing=pairing,
            reference=ref,
            progress=(lambda r: progress("  h=%g done" % r["h"]))
            if progress else None)
        key = "%s_%s" % (mode, pairing)
        out[key] = tab
        rows = [{"h": r["h"], "err_v_h1": r["err_v_h1"],
                 "err_p_l2": r["err_p_l2"]} for r in tab["rows"]]
        write_csv(os.path.join(outdir, "convergence_%s.csv" % key), rows)
    return out
