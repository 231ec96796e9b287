/** Minimal image decoding: binary PPM (P6) and PGM (P5). The toy pipelines
 * only need per-patch mean colors, so these cover the fixture corpus without
 * pulling in a codec dependency. */

export interface Image {
  width: number;
  height: number;
  /** RGB interleaved, values in [0, 1] */
  pixels: Float64Array;
}

export function decodeNetpbm(buf: Buffer): Image {
  const magic = buf.subarray(0, 2).toString("ascii");
  if (magic !== "P6" && magic !== "P5") {
    throw new Error(`unsupported image format (magic ${JSON.stringify(magic)})`);
  }
  // header tokens: magic, width, height, maxval, separated by whitespace/comments
  let pos = 2;
  const tokens: number[] = [];
  while (tokens.length < 3) {
    while (pos < buf.length && isSpace(buf[pos])) pos++;
    if (buf[pos] === 0x23) { // '#' comment
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < buf.length && !isSpace(buf[pos])) pos++;
    tokens.push(parseInt(buf.subarray(start, pos).toString("ascii"), 10));
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = tokens;
  if (!(width > 0 && height > 0 && maxval > 0 && maxval < 65536)) {
    throw new Error("malformed netpbm header");
  }
  const channels = magic === "P6" ? 3 : 1;
  const needed = width * height * channels;
  if (buf.length - pos < needed) {
    throw new Error("netpbm pixel data truncated");
  }
  const pixels = new Float64Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    if (channels === 3) {
      pixels[3 * i] = buf[pos + 3 * i] / maxval;
      pixels[3 * i + 1] = buf[pos + 3 * i + 1] / maxval;
      pixels[3 * i + 2] = buf[pos + 3 * i + 2] / maxval;
    } else {
      const g = buf[pos + i] / maxval;
      pixels[3 * i] = pixels[3 * i + 1] = pixels[3 * i + 2] = g;
    }
  }
  return { width, height, pixels };
}

export function encodePpm(image: Image): Buffer {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  const body = Buffer.alloc(image.width * image.height * 3);
  for (let i = 0; i < body.length; i++) {
    body[i] = Math.max(0, Math.min(255, Math.round(image.pixels[i] * 255)));
  }
  return Buffer.concat([header, body]);
}

/** Mean RGB of each cell of a grid x grid partition, row-major: (grid^2, 3). */
export function patchMeans(image: Image, grid: number): Float64Array[] {
  const patches: Float64Array[] = [];
  for (let py = 0; py < grid; py++) {
    for (let px = 0; px < grid; px++) {
      const x0 = Math.floor((px * image.width) / grid);
      const x1 = Math.max(x0 + 1, Math.floor(((px + 1) * image.width) / grid));
      const y0 = Math.floor((py * image.height) / grid);
      const y1 = Math.max(y0 + 1, Math.floor(((py + 1) * image.height) / grid));
      const mean = new Float64Array(3);
      let count = 0;
      for (let y = y0; y < y1; y++) {
        for (let x = x0; x < x1; x++) {
          const off = 3 * (y * image.width + x);
          mean[0] += image.pixels[off];
          mean[1] += image.pixels[off + 1];
          mean[2] += image.pixels[off + 2];
          count++;
        }
      }
      for (let c = 0; c < 3; c++) mean[c] /= count;
      patches.push(mean);
    }
  }
  return patches;
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}
