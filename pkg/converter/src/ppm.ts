/** Binary PPM writer (P6, maxval 255) for converted camera images. */

export function encodePpm(width: number, height: number, rgb: Uint8Array): Buffer {
  if (rgb.length !== 3 * width * height) {
    throw new Error(`sample count ${rgb.length} does not match 3*${width}*${height}`);
  }
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, "ascii");
  return Buffer.concat([header, Buffer.from(rgb)]);
}
