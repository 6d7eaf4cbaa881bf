/**
 * 16-bit binary PGM (P5, maxval 65535, big-endian samples), the disparity
 * container of the stereo pipeline. Raw value 0 means "invalid pixel",
 * everything else encodes disparity * 256.
 */

export interface Pgm16 {
  width: number;
  height: number;
  /** raw big-endian-decoded samples, row-major */
  raw: Uint16Array;
}

export function encodePgm16(width: number, height: number, raw: Uint16Array): Buffer {
  if (raw.length !== width * height) {
    throw new Error(`sample count ${raw.length} does not match ${width}x${height}`);
  }
  const header = Buffer.from(`P5\n${width} ${height}\n65535\n`, "ascii");
  const body = Buffer.alloc(raw.length * 2);
  for (let i = 0; i < raw.length; i++) {
    body.writeUInt16BE(raw[i], 2 * i);
  }
  return Buffer.concat([header, body]);
}

export function decodePgm16(buf: Buffer): Pgm16 {
  const header = parsePnmHeader(buf, "P5");
  if (header.maxval !== 65535) {
    throw new Error(`PGM maxval must be 65535, got ${header.maxval}`);
  }
  const n = header.width * header.height;
  if (buf.length < header.offset + 2 * n) {
    throw new Error("truncated PGM payload");
  }
  const raw = new Uint16Array(n);
  for (let i = 0; i < n; i++) {
    raw[i] = buf.readUInt16BE(header.offset + 2 * i);
  }
  return { width: header.width, height: header.height, raw };
}

export interface PnmHeader {
  width: number;
  height: number;
  maxval: number;
  offset: number;
}

/** Shared binary-PNM header parser ("#"-comments allowed). */
export function parsePnmHeader(buf: Buffer, magic: string): PnmHeader {
  if (buf.length < 2 || buf.toString("ascii", 0, 2) !== magic) {
    throw new Error(`bad magic, expected ${magic}`);
  }
  const fields: number[] = [];
  let pos = 2;
  while (fields.length < 3) {
    if (pos >= buf.length) throw new Error("header ended early");
    const c = buf[pos];
    if (c === 0x23 /* # */) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
    } else if (c === 0x20 || c === 0x09 || c === 0x0a || c === 0x0d) {
      pos++;
    } else if (c >= 0x30 && c <= 0x39) {
      let v = 0;
      while (pos < buf.length && buf[pos] >= 0x30 && buf[pos] <= 0x39) {
        v = v * 10 + (buf[pos] - 0x30);
        pos++;
      }
      fields.push(v);
    } else {
      throw new Error(`unexpected byte ${c} in header`);
    }
  }
  pos++; // the single whitespace byte after maxval
  const [width, height, maxval] = fields;
  if (width < 1 || height < 1) throw new Error(`bad dimensions ${width}x${height}`);
  return { width, height, maxval, offset: pos };
}
