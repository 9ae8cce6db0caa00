"""Command-line interface.

Subcommands:

* ``puflow run <config.json>``: execute a scenario end to end.
* ``puflow convergence <family.json>``: run a mesh-refinement study.
* ``puflow validate <mesh.json>``: load and validate a mesh file.
* ``puflow make-mesh <geometry.json>``: generate a mesh from geometry
  parameters (structured helper).
"""

import argparse
import json
import os
import sys


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="puflow",
        description="Overlapping-mesh incompressible flow and FSI solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario config")
    p_run.add_argument("config")
    p_run.add_argument("--steps", type=int, default=None,
                       help="cap the number of time steps")
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--dump-overlap", action="store_true",
                       help="write the tertiary integration mesh as VTK")
    p_run.add_argument("--dump-system", action="store_true",
                       help="write the final system matrix (MatrixMarket)")
    p_run.add_argument("--dump-support", action="store_true",
                       help="write the effective-support diagnostic CSV")
    p_run.add_argument("--midway-remesh", type=float, default=None,
                       metavar="T", help="classical valve path: rebuild "
                       "the fitted mesh once at time T")
    p_run.add_argument("--threads", type=int, default=None,
                       help="cap BLAS threads (best effort)")

    p_conv = sub.add_parser("convergence", help="run a refinement study")
    p_conv.add_argument("config")
    p_conv.add_argument("--output-dir", default=None)

    p_val = sub.add_parser("validate", help="validate a mesh file")
    p_val.add_argument("mesh")

    p_mk = sub.add_parser("make-mesh", help="generate a mesh from "
                          "geometry parameters")
    p_mk.add_argument("geometry")
    p_mk.add_argument("-o", "--output", default=None)

    args = parser.parse_args(argv)
    if getattr(args, "threads", None):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    if args.command == "run":
        return _cmd_run(args)
    if args.command == "convergence":
        return _cmd_convergence(args)
    if args.command == "validate":
        return _cmd_validate(args)
    if args.command == "make-mesh":
        return _cmd_make_mesh(args)
    return 2


def _default_outdir(config_path):
    base = os.path.splitext(os.path.basename(config_path))[0]
    return os.path.join("outputs", base)


def _fail(exc, outdir=None):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "error.json"), "w") as fh:
            json.dump(payload, fh, indent=2)
    print(json.dumps(payload), file=sys.stderr)
    return 1


def _cmd_run(args):
    from .run import run_scenario
    outdir = args.output_dir or _default_outdir(args.config)
    try:
        summary = run_scenario(args.config, outdir, steps=args.steps,
                               dump_overlap=args.dump_overlap,
                               dump_system=args.dump_system,
                               dump_support=args.dump_support,
                               midway_remesh=args.midway_remesh)
    except Exception as exc:                      # noqa: BLE001
        return _fail(exc, outdir)
    print("wrote %s (wall time %.1f s)"
          % (os.path.join(outdir, "summary.json"), summary["wall_time"]))
    return 0


def _cmd_convergence(args):
    from .run import run_scenario
    outdir = args.output_dir or _default_outdir(args.config)
    with open(args.config) as fh:
        cfg = json.load(fh)
    cfg.setdefault("scenario", "convergence")
    try:
        summary = run_scenario(cfg, outdir)
    except Exception as exc:                      # noqa: BLE001
        return _fail(exc, outdir)
    for key, tab in summary.items():
        if isinstance(tab, dict) and "rate_combined" in tab:
            print("%s: combined rate %.2f" % (key, tab["rate_combined"]))
    return 0


def _cmd_validate(args):
    from .mesh import load_mesh, MeshError
    try:
        mesh = load_mesh(args.mesh)
    except MeshError as exc:
        return _fail(exc)
    stats = mesh.stats()
    stats["boundary_tags"] = mesh.boundary_tags()
    print(json.dumps(stats, indent=2))
    return 0


def _cmd_make_mesh(args):
    from . import meshgen
    from .mesh import save_mesh
    with open(args.geometry) as fh:
        geo = json.load(fh)
    kind = geo.pop("kind", None)
    out = args.output or geo.pop("output", "mesh.json")
    try:
        if kind == "rectangle":
            mesh = meshgen.rectangle(tuple(geo["box"]), geo["nx"],
                                     geo["ny"], tags=geo.get("tags"))
        elif kind == "rectangle_with_hole":
            mesh = meshgen.rectangle_with_hole(
                tuple(geo["box"]), tuple(geo["center"]), geo["radius"],
                geo["h"], tags=geo.get("tags"))
        elif kind == "annulus":
            mesh = meshgen.annulus(tuple(geo["center"]), geo["r_inner"],
                                   geo["r_outer"], geo["n_r"],
                                   geo["n_theta"], tags=geo.get("tags"))
        elif kind == "disk_with_ring":
            mesh = meshgen.disk_with_ring(
                tuple(geo["center"]), geo["r_solid"], geo["r_outer"],
                geo["h"], n_theta=geo.get("n_theta"))
        else:
            raise ValueError("unknown geometry kind %r" % kind)
    except Exception as exc:                      # noqa: BLE001
        return _fail(exc)
    save_mesh(mesh, out)
    print("wrote %s (%d triangles)" % (out, mesh.n_triangles))
    return 0


if __name__ == "__main__":
    sys.exit(main())
