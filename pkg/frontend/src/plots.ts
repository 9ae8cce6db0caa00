/** Report figures: log-log convergence plots and coefficient traces. */

import * as fs from "fs";
import * as path from "path";

import { parseCsv, numericColumn, Table } from "./csv";
import { fittedSlope } from "./fit";
import { Axis, Scene, scene, render, line, circle, rect, text,
         frame } from "./svg";
import { Raster } from "./png";

const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

interface Canvas {
  s: Scene;
  r: Raster;
}

function canvas(w = 760, h = 520): Canvas {
  return { s: scene(w, h), r: new Raster(w, h) };
}

function dualLine(c: Canvas, pts: [number, number][], color: string,
                  width = 1.8, dash = ""): void {
  line(c.s, pts, color, width, dash);
  c.r.line(pts, color, width);
}

function dualText(c: Canvas, x: number, y: number, t: string, size = 13,
                  anchor = "start", color = "#222222"): void {
  text(c.s, x, y, t, size, anchor, color);
  c.r.text(x, y, t, size, anchor, color);
}

function writeOut(c: Canvas, outBase: string): void {
  fs.mkdirSync(path.dirname(outBase), { recursive: true });
  fs.writeFileSync(outBase + ".svg", render(c.s));
  fs.writeFileSync(outBase + ".png", c.r.encode());
}

export interface ConvergenceResult {
  slopes: Record<string, number>;
  outputs: string[];
}

export function plotConvergence(csvPaths: string[],
                                outBase: string): ConvergenceResult {
  if (!csvPaths.length) throw new Error("no convergence CSV files given");
  const series: { label: string; h: number[]; err: number[] }[] = [];
  for (const p of csvPaths) {
    const table = parseCsv(fs.readFileSync(p, "utf8"));
    const h = numericColumn(table, "h");
    const base = path.basename(p).replace(/\.csv$/, "");
    for (const col of ["err_v_h1", "err_p_l2"]) {
      series.push({ label: `${base}:${col}`, h,
                    err: numericColumn(table, col) });
    }
  }
  const hs = series.flatMap((s) => s.h);
  const errs = series.flatMap((s) => s.err);
  const c = canvas();
  const xa = new Axis(Math.min(...hs) / 1.3, Math.max(...hs) * 1.3,
                      90, 720, true);
  const ya = new Axis(Math.min(...errs) / 2, Math.max(...errs) * 2,
                      460, 40, true);
  frame(c.s, xa, ya, "h", "error");
  const slopes: Record<string, number> = {};
  series.forEach((s, k) => {
    const color = COLORS[k % COLORS.length];
    const pts: [number, number][] = s.h.map(
      (h, i) => [xa.map(h), ya.map(s.err[i])]);
    dualLine(c, pts, color);
    pts.forEach(([x, y]) => {
      circle(c.s, x, y, 3.5, color);
      c.r.circle(x, y, 3, color);
    });
    const slope = fittedSlope(s.h, s.err);
    slopes[s.label] = slope;
    text(c.s, 96, 56 + 16 * k, `${s.label}  slope ${slope.toFixed(2)}`,
         12, "start", color);
    c.r.text(96, 56 + 16 * k, `slope ${slope.toFixed(2)}`, 12, "start",
             color);
  });
  // dotted second-order reference through the last point of series 0
  const s0 = series[0];
  const href = [Math.max(...s0.h), Math.min(...s0.h)];
  const e0 = s0.err[s0.h.indexOf(href[1])];
  const refPts: [number, number][] = href.map((h) => [
    xa.map(h), ya.map(e0 * Math.pow(h / href[1], 2))]);
  dualLine(c, refPts, "#777777", 1.2, "6,5");
  dualText(c, refPts[0][0] + 6, refPts[0][1], "slope 2 reference", 11);
  writeOut(c, outBase);
  return { slopes, outputs: [outBase + ".svg", outBase + ".png"] };
}

export interface Band {
  column: string;
  lo: number;
  hi: number;
}

export function plotCoefficients(csvPath: string, bands: Band[],
                                 outBase: string): string[] {
  const table = parseCsv(fs.readFileSync(csvPath, "utf8"));
  const t = numericColumn(table, "t");
  if (!t.length) throw new Error("empty time series");
  const traced = ["cd", "cl", "dp"].filter(
    (cname) => table.columns.includes(cname));
  if (!traced.length) throw new Error("no coefficient columns in CSV");
  const c = canvas();
  const values = traced.flatMap((name) => numericColumn(table, name));
  const bandVals = bands.flatMap((b) => [b.lo, b.hi]);
  const lo = Math.min(...values, ...bandVals);
  const hi = Math.max(...values, ...bandVals);
  const xa = new Axis(t[0], t[t.length - 1], 90, 720, false);
  const ya = new Axis(lo - 0.08 * (hi - lo), hi + 0.08 * (hi - lo),
                      460, 40, false);
  bands.forEach((b, k) => {
    const y1 = ya.map(b.hi);
    const y0 = ya.map(b.lo);
    rect(c.s, xa.pxLo, y1, xa.pxHi - xa.pxLo, y0 - y1, COLORS[k % 5],
         0.18);
    c.r.rect(xa.pxLo, y1, xa.pxHi - xa.pxLo, y0 - y1, COLORS[k % 5],
             0.18);
  });
  frame(c.s, xa, ya, "t", "coefficient");
  traced.forEach((name, k) => {
    const vals = numericColumn(table, name);
    const pts: [number, number][] = t.map(
      (tv, i) => [xa.map(tv), ya.map(vals[i])]);
    dualLine(c, pts, COLORS[k % 5], 1.4);
    dualText(c, 96, 56 + 16 * k, name, 12, "start", COLORS[k % 5]);
  });
  writeOut(c, outBase);
  return [outBase + ".svg", outBase + ".png"];
}

export const TUREK_BANDS: Band[] = [
  { column: "cd", lo: 3.22, hi: 3.24 },
  { column: "cl", lo: 0.99, hi: 1.01 },
  { column: "dp", lo: 2.46, hi: 2.5 },
];

export function buildReport(artifactDir: string, outDir: string):
    string[] {
  const entries = fs.readdirSync(artifactDir);
  const outputs: string[] = [];
  const conv = entries.filter(
    (e) => e.startsWith("convergence") && e.endsWith(".csv"));
  if (conv.length) {
    const res = plotConvergence(
      conv.map((e) => path.join(artifactDir, e)),
      path.join(outDir, "convergence"));
    outputs.push(...res.outputs);
    const summary = Object.entries(res.slopes).map(
      ([k, v]) => `${k}: slope ${v.toFixed(3)}`).join("\n");
    fs.writeFileSync(path.join(outDir, "convergence_slopes.txt"),
                     summary + "\n");
    outputs.push(path.join(outDir, "convergence_slopes.txt"));
  }
  const series = entries.filter(
    (e) => (e.startsWith("series") || e.startsWith("turek"))
      && e.endsWith(".csv"));
  for (const e of series) {
    outputs.push(...plotCoefficients(
      path.join(artifactDir, e), TUREK_BANDS,
      path.join(outDir, e.replace(/\.csv$/, "") + "_coefficients")));
  }
  if (!outputs.length) {
    throw new Error(`no report inputs found under ${artifactDir}`);
  }
  return outputs;
}
