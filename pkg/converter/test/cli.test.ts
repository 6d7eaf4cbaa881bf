import assert from "node:assert/strict";
import { test } from "node:test";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { encode as encodePng } from "fast-png";

import { expandGlob, main } from "../src/cli.js";
import { decodePgm16 } from "../src/pgm16.js";

function tmpdir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "conv-"));
}

function writePng16(file: string, w: number, h: number, raw: Uint16Array): void {
  fs.writeFileSync(file, encodePng({ width: w, height: h, depth: 16, channels: 1, data: raw }));
}

test("glob expands *-patterns against the basename", () => {
  const td = tmpdir();
  for (const n of ["a1.png", "a2.png", "b1.txt"]) fs.writeFileSync(path.join(td, n), "");
  assert.deepEqual(
    expandGlob(path.join(td, "*.png")).map((p) => path.basename(p)),
    ["a1.png", "a2.png"]
  );
  assert.deepEqual(expandGlob(path.join(td, "a1.png")).length, 1);
  assert.deepEqual(expandGlob(path.join(td, "*.jpg")).length, 0);
});

test("batch conversion succeeds with a summary and exit 0", () => {
  const td = tmpdir();
  const out = path.join(td, "out");
  writePng16(path.join(td, "x.png"), 2, 2, new Uint16Array([0, 256, 512, 65535]));
  writePng16(path.join(td, "y.png"), 1, 1, new Uint16Array([1000]));
  const code = main(["--from", "png16", "--in", path.join(td, "*.png"), "--out", out]);
  assert.equal(code, 0);
  const back = decodePgm16(fs.readFileSync(path.join(out, "x.pgm")));
  assert.deepEqual(Array.from(back.raw), [0, 256, 512, 65535]);
  assert.ok(fs.existsSync(path.join(out, "y.pgm")));
});

test("malformed inputs are rejected with nonzero exit", () => {
  const td = tmpdir();
  fs.writeFileSync(path.join(td, "junk.png"), Buffer.from("not a png at all"));
  const code = main(["--from", "png16", "--in", path.join(td, "*.png"), "--out", path.join(td, "o")]);
  assert.notEqual(code, 0);
});

test("existing outputs are refused without --overwrite", () => {
  const td = tmpdir();
  const out = path.join(td, "out");
  writePng16(path.join(td, "x.png"), 1, 1, new Uint16Array([5]));
  assert.equal(main(["--from", "png16", "--in", path.join(td, "x.png"), "--out", out]), 0);
  assert.notEqual(main(["--from", "png16", "--in", path.join(td, "x.png"), "--out", out]), 0);
  assert.equal(main(["--from", "png16", "--in", path.join(td, "x.png"), "--out", out, "--overwrite"]), 0);
});

test("usage errors exit 2", () => {
  assert.equal(main(["--from", "bmp", "--in", "x", "--out", "y"]), 2);
  assert.equal(main(["--bogus"]), 2);
});

test("empty match set exits nonzero", () => {
  const td = tmpdir();
  assert.notEqual(main(["--from", "png16", "--in", path.join(td, "*.png"), "--out", td]), 0);
});
