/** Tiny SVG scene builder: enough for log-log and time-series plots. */

export interface Scene {
  width: number;
  height: number;
  body: string[];
}

export function scene(width = 760, height = 520): Scene {
  return { width, height, body: [] };
}

export function line(s: Scene, pts: [number, number][], stroke: string,
                     width = 1.6, dash = ""): void {
  const d = pts.map((p) => `${p[0].toFixed(2)},${p[1].toFixed(2)}`)
    .join(" ");
  const dd = dash ? ` stroke-dasharray="${dash}"` : "";
  s.body.push(`<polyline fill="none" stroke="${stroke}" ` +
    `stroke-width="${width}"${dd} points="${d}"/>`);
}

export function circle(s: Scene, x: number, y: number, r: number,
                       fill: string): void {
  s.body.push(`<circle cx="${x.toFixed(2)}" cy="${y.toFixed(2)}" ` +
    `r="${r}" fill="${fill}"/>`);
}

export function rect(s: Scene, x: number, y: number, w: number,
                     h: number, fill: string, opacity = 1.0): void {
  s.body.push(`<rect x="${x.toFixed(2)}" y="${y.toFixed(2)}" ` +
    `width="${w.toFixed(2)}" height="${h.toFixed(2)}" fill="${fill}" ` +
    `opacity="${opacity}"/>`);
}

export function text(s: Scene, x: number, y: number, content: string,
                     size = 13, anchor = "start", color = "#222"): void {
  s.body.push(`<text x="${x.toFixed(2)}" y="${y.toFixed(2)}" ` +
    `font-family="Helvetica,Arial,sans-serif" font-size="${size}" ` +
    `text-anchor="${anchor}" fill="${color}">${escapeXml(content)}</text>`);
}

export function render(s: Scene): string {
  return `<svg xmlns="http://www.w3.org/2000/svg" width="${s.width}" ` +
    `height="${s.height}" viewBox="0 0 ${s.width} ${s.height}">\n` +
    `<rect width="${s.width}" height="${s.height}" fill="white"/>\n` +
    s.body.join("\n") + "\n</svg>\n";
}

function escapeXml(t: string): string {
  return t.replace(/&/g, "&amp;").replace(/</g, "&lt;")
    .replace(/>/g, "&gt;");
}

/** Linear or log axis mapper onto pixel coordinates. */
export class Axis {
  constructor(public lo: number, public hi: number, public pxLo: number,
              public pxHi: number, public log = false) {
    if (log && (lo <= 0 || hi <= 0)) {
      throw new Error("log axis needs positive bounds");
    }
  }

  map(v: number): number {
    const t = this.log
      ? (Math.log(v) - Math.log(this.lo))
        / (Math.log(this.hi) - Math.log(this.lo))
      : (v - this.lo) / (this.hi - this.lo);
    return this.pxLo + t * (this.pxHi - this.pxLo);
  }

  ticks(n = 5): number[] {
    if (!this.log) {
      const out: number[] = [];
      for (let k = 0; k <= n; k++) {
        out.push(this.lo + ((this.hi - this.lo) * k) / n);
      }
      return out;
    }
    const out: number[] = [];
    const d0 = Math.floor(Math.log10(this.lo));
    const d1 = Math.ceil(Math.log10(this.hi));
    for (let d = d0; d <= d1; d++) {
      const v = Math.pow(10, d);
      if (v >= this.lo * 0.999 && v <= this.hi * 1.001) out.push(v);
    }
    return out.length >= 2 ? out : [this.lo, this.hi];
  }
}

export function frame(s: Scene, xa: Axis, ya: Axis, xlabel: string,
                      ylabel: string): void {
  const x0 = xa.pxLo;
  const x1 = xa.pxHi;
  const y0 = ya.pxLo;
  const y1 = ya.pxHi;
  line(s, [[x0, y0], [x1, y0]], "#333", 1);
  line(s, [[x0, y0], [x0, y1]], "#333", 1);
  for (const t of xa.ticks()) {
    const px = xa.map(t);
    line(s, [[px, y0], [px, y0 + 5]], "#333", 1);
    text(s, px, y0 + 20, fmtTick(t, xa.log), 11, "middle");
  }
  for (const t of ya.ticks()) {
    const py = ya.map(t);
    line(s, [[x0 - 5, py], [x0, py]], "#333", 1);
    text(s, x0 - 8, py + 4, fmtTick(t, ya.log), 11, "end");
  }
  text(s, (x0 + x1) / 2, y0 + 38, xlabel, 13, "middle");
  text(s, x0 - 52, ya.pxHi - 12, ylabel, 13, "start");
}

function fmtTick(v: number, log: boolean): string {
  if (log) {
    const e = Math.round(Math.log10(v));
    return `1e${e}`;
  }
  return Math.abs(v) >= 100 || Number.isInteger(v)
    ? String(v) : v.toPrecision(3);
}
