import * as fs from "node:fs";
import * as path from "node:path";

import { Image, encodePpm } from "../src/image.js";
import { Rng } from "../src/rng.js";

/** A small image whose hue depends on the class and texture on the seed. */
export function toyImage(classIndex: number, seed: number, size = 16): Image {
  const rng = new Rng(seed * 977 + classIndex);
  const pixels = new Float64Array(size * size * 3);
  const base = [(classIndex * 67 + 40) % 255, (classIndex * 131 + 90) % 255, 200];
  for (let i = 0; i < size * size; i++) {
    for (let c = 0; c < 3; c++) {
      pixels[3 * i + c] = Math.min(1, Math.max(0, base[c] / 255 + 0.2 * (rng.next() - 0.5)));
    }
  }
  return { width: size, height: size, pixels };
}

/** Writes numClasses folders of `count` PPM images; returns the root dir. */
export function writeToyFolder(root: string, numClasses: number, count: number): string {
  for (let c = 0; c < numClasses; c++) {
    const dir = path.join(root, `class_${c}`);
    fs.mkdirSync(dir, { recursive: true });
    for (let i = 0; i < count; i++) {
      fs.writeFileSync(path.join(dir, `img_${i}.ppm`), encodePpm(toyImage(c, i)));
    }
  }
  return root;
}
