/** Report generator CLI: figures from solver artifacts. */

import { plotConvergence, plotCoefficients, buildReport,
         TUREK_BANDS } from "./plots";

function main(argv: string[]): number {
  const [cmd, ...rest] = argv;
  try {
    if (cmd === "convergence") {
      const out = flag(rest, "--out") ?? "report/convergence";
      const res = plotConvergence(positional(rest), out);
      for (const [k, v] of Object.entries(res.slopes)) {
        console.log(`${k}: fitted slope ${v.toFixed(3)}`);
      }
      console.log(res.outputs.join("\n"));
    } else if (cmd === "coefficients") {
      const out = flag(rest, "--out") ?? "report/coefficients";
      const files = positional(rest);
      if (files.length !== 1) throw new Error("need one series CSV");
      console.log(
        plotCoefficients(files[0], TUREK_BANDS, out).join("\n"));
    } else if (cmd === "report") {
      const artifacts = flag(rest, "--artifacts") ?? "sample_artifacts";
      const out = flag(rest, "--out") ?? "report";
      console.log(buildReport(artifacts, out).join("\n"));
    } else {
      console.error(
        "usage: cli.js convergence|coefficients|report [files] " +
        "[--artifacts DIR] [--out PATH]");
      return 2;
    }
  } catch (err) {
    console.error(String(err));
    return 1;
  }
  return 0;
}

function flag(args: string[], name: string): string | undefined {
  const k = args.indexOf(name);
  return k >= 0 ? args[k + 1] : undefined;
}

function positional(args: string[]): string[] {
  const out: string[] = [];
  for (let i = 0; i < args.length; i++) {
    if (args[i].startsWith("--")) i++;
    else out.push(args[i]);
  }
  return out;
}

process.exit(main(process.argv.slice(2)));
