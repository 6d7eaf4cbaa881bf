/**
 * convert --from {png16,pfm,png8} --in GLOB --out DIR [--overwrite]
 *
 * Converts every file matched by GLOB into DIR (same stem, .pgm or .ppm).
 * Prints a machine-parsable JSON summary line {converted, clamped, rejected}
 * and exits nonzero when anything was rejected.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { pfmToPgm16, png16ToPgm16, png8ColorToPpm, type Converted } from "./convert.js";

const FORMATS: Record<string, { convert: (buf: Buffer) => Converted; ext: string }> = {
  png16: { convert: png16ToPgm16, ext: ".pgm" },
  pfm: { convert: pfmToPgm16, ext: ".pgm" },
  png8: { convert: png8ColorToPpm, ext: ".ppm" },
};

interface Args {
  from: string;
  pattern: string;
  out: string;
  overwrite: boolean;
}

export function parseArgs(argv: string[]): Args {
  let from = "";
  let pattern = "";
  let out = "";
  let overwrite = false;
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i];
    if (a === "--from") from = argv[++i] ?? "";
    else if (a === "--in") pattern = argv[++i] ?? "";
    else if (a === "--out") out = argv[++i] ?? "";
    else if (a === "--overwrite") overwrite = true;
    else throw new UsageError(`unknown argument ${a}`);
  }
  if (!(from in FORMATS)) throw new UsageError(`--from must be one of ${Object.keys(FORMATS).join(", ")}`);
  if (!pattern) throw new UsageError("--in GLOB is required");
  if (!out) throw new UsageError("--out DIR is required");
  return { from, pattern, out, overwrite };
}

export class UsageError extends Error {}

/** Minimal glob: literal directory part plus *-wildcards in the basename. */
export function expandGlob(pattern: string): string[] {
  const dir = path.dirname(pattern);
  const base = path.basename(pattern);
  if (!base.includes("*")) {
    return fs.existsSync(pattern) ? [pattern] : [];
  }
  const rx = new RegExp(
    "^" + base.split("*").map((s) => s.replace(/[.+?^${}()|[\]\\]/g, "\\$&")).join(".*") + "$"
  );
  if (!fs.existsSync(dir)) return [];
  return fs
    .readdirSync(dir)
    .filter((n) => rx.test(n))
    .sort()
    .map((n) => path.join(dir, n));
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
  } catch (e) {
    console.error(`usage error: ${(e as Error).message}`);
    return 2;
  }
  const files = expandGlob(args.pattern);
  if (files.length === 0) {
    console.error(`no inputs match ${args.pattern}`);
    return 1;
  }
  fs.mkdirSync(args.out, { recursive: true });
  const fmt = FORMATS[args.from];
  let converted = 0;
  let clamped = 0;
  const rejected: string[] = [];
  for (const file of files) {
    const stem = path.basename(file).replace(/\.[^.]*$/, "");
    const target = path.join(args.out, stem + fmt.ext);
    try {
      if (!args.overwrite && fs.existsSync(target)) {
        throw new Error(`${target} exists (use --overwrite)`);
      }
      const result = fmt.convert(fs.readFileSync(file));
      const tmp = target + ".tmp";
      fs.writeFileSync(tmp, result.out);
      fs.renameSync(tmp, target);
      converted++;
      clamped += result.clamped;
      for (const w of result.warnings) console.error(`${file}: ${w}`);
    } catch (e) {
      rejected.push(file);
      console.error(`${file}: rejected: ${(e as Error).message}`);
    }
  }
  console.log(JSON.stringify({ converted, clamped, rejected: rejected.length }));
  return rejected.length > 0 ? 1 : 0;
}

if (process.argv[1] && path.resolve(process.argv[1]) === path.resolve(new URL(import.meta.url).pathname)) {
  process.exit(main(process.argv.slice(2)));
}
