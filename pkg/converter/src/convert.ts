/**
 * The three conversions: KITTI 16-bit PNG -> PGM16 (lossless raw copy),
 * SceneFlow PFM -> PGM16 (quantized to the raw = round(256 * d) convention),
 * and 8-bit PNG -> PPM (lossless pixel copy).
 */

import { decode as decodePng } from "fast-png";
import { decodePfm } from "./pfm.js";
import { encodePgm16 } from "./pgm16.js";
import { encodePpm } from "./ppm.js";

export interface Converted {
  out: Buffer;
  /** valid samples clamped into [1, 65535] (pfm path only) */
  clamped: number;
  warnings: string[];
}

export function png16ToPgm16(buf: Uint8Array): Converted {
  const png = decodePng(buf);
  if (png.depth !== 16) {
    throw new Error(`expected 16-bit PNG, got depth ${png.depth}`);
  }
  if (png.channels !== 1) {
    throw new Error(`expected single-channel PNG, got ${png.channels} channels`);
  }
  const raw = png.data as Uint16Array;
  return { out: encodePgm16(png.width, png.height, raw), clamped: 0, warnings: [] };
}

export function pfmToPgm16(buf: Buffer): Converted {
  const pfm = decodePfm(buf);
  const raw = new Uint16Array(pfm.width * pfm.height);
  let clamped = 0;
  for (let i = 0; i < raw.length; i++) {
    const d = pfm.data[i];
    if (!Number.isFinite(d) || d <= 0) {
      raw[i] = 0; // nonpositive / NaN disparities are invalid
      continue;
    }
    const q = Math.round(256 * d);
    if (q < 1 || q > 65535) {
      clamped++;
      raw[i] = q < 1 ? 1 : 65535;
    } else {
      raw[i] = q;
    }
  }
  return { out: encodePgm16(pfm.width, pfm.height, raw), clamped, warnings: [] };
}

export function png8ColorToPpm(buf: Uint8Array): Converted {
  const png = decodePng(buf);
  if (png.depth !== 8) {
    throw new Error(`expected 8-bit PNG, got depth ${png.depth}`);
  }
  const n = png.width * png.height;
  const rgb = new Uint8Array(3 * n);
  const src = png.data as Uint8Array;
  const warnings: string[] = [];
  switch (png.channels) {
    case 3:
      rgb.set(src);
      break;
    case 4:
      for (let i = 0; i < n; i++) {
        rgb[3 * i] = src[4 * i];
        rgb[3 * i + 1] = src[4 * i + 1];
        rgb[3 * i + 2] = src[4 * i + 2];
      }
      warnings.push("alpha channel dropped");
      break;
    case 1:
      for (let i = 0; i < n; i++) {
        rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = src[i];
      }
      break;
    case 2:
      for (let i = 0; i < n; i++) {
        rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = src[2 * i];
      }
      warnings.push("alpha channel dropped");
      break;
    default:
      throw new Error(`unsupported channel count ${png.channels}`);
  }
  return { out: encodePpm(png.width, png.height, rgb), clamped: 0, warnings };
}
