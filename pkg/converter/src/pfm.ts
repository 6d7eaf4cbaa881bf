/**
 * PFM reader (single-channel "Pf"): float32 samples, scale line whose sign
 * carries the endianness (negative = little-endian), rows stored bottom-up.
 */

export interface Pfm {
  width: number;
  height: number;
  /** top-down row-major float samples */
  data: Float32Array;
}

function readLine(buf: Buffer, pos: number): { text: string; next: number } {
  const nl = buf.indexOf(0x0a, pos);
  if (nl < 0) throw new Error("PFM header ended early");
  return { text: buf.toString("ascii", pos, nl).trim(), next: nl + 1 };
}

export function decodePfm(buf: Buffer): Pfm {
  const magic = readLine(buf, 0);
  if (magic.text === "PF") {
    throw new Error("3-channel PFM not supported; expected single-channel Pf");
  }
  if (magic.text !== "Pf") {
    throw new Error(`bad PFM magic ${JSON.stringify(magic.text)}`);
  }
  const dims = readLine(buf, magic.next);
  const parts = dims.text.split(/\s+/).map(Number);
  if (parts.length !== 2 || parts.some((v) => !Number.isInteger(v) || v < 1)) {
    throw new Error(`bad PFM dimensions line ${JSON.stringify(dims.text)}`);
  }
  const [width, height] = parts;
  const scaleLine = readLine(buf, dims.next);
  const scale = Number(scaleLine.text);
  if (!Number.isFinite(scale) || scale === 0) {
    throw new Error(`bad PFM scale ${JSON.stringify(scaleLine.text)}`);
  }
  const littleEndian = scale < 0;
  const n = width * height;
  if (buf.length < scaleLine.next + 4 * n) {
    throw new Error("truncated PFM payload");
  }
  const data = new Float32Array(n);
  for (let row = 0; row < height; row++) {
    const srcRow = height - 1 - row; // PFM rows run bottom-up
    for (let x = 0; x < width; x++) {
      const off = scaleLine.next + 4 * (srcRow * width + x);
      data[row * width + x] = littleEndian ? buf.readFloatLE(off) : buf.readFloatBE(off);
    }
  }
  return { width, height, data };
}
