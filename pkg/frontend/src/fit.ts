/** Least-squares slope of log(err) against log(h). */
export function fittedSlope(h: number[], err: number[]): number {
  if (h.length !== err.length || h.length < 2) {
    throw new Error("need at least two (h, err) samples");
  }
  const x = h.map(Math.log);
  const y = err.map(Math.log);
  const n = x.length;
  const mx = x.reduce((a, b) => a + b, 0) / n;
  const my = y.reduce((a, b) => a + b, 0) / n;
  let sxx = 0;
  let sxy = 0;
  for (let i = 0; i < n; i++) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / sxx;
}
