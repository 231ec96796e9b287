/** Folder-to-feature-file export: per-class subfolders in, GLFv1 out.
 * Shot sampling is a seeded shuffle of the sorted filenames, so a spec
 * exports bit-identically every time. Unreadable images are skipped with a
 * warning and counted. */

import * as fs from "node:fs";
import * as path from "node:path";

import { Backbone, makeBackbone } from "./backbone.js";
import { decodeNetpbm } from "./image.js";
import { FeatureRecord, encodeFeatureFile } from "./format.js";
import { Rng } from "./rng.js";

export interface ExportSpec {
  backbone: string;
  imagesDir: string;
  shots: number;
  outPath: string;
  seed: number;
}

export interface ExportReport {
  classNames: string[];
  recordCount: number;
  skipped: number;
  d: number;
  L: number;
}

export function runExport(spec: ExportSpec, warn: (msg: string) => void = console.warn):
    ExportReport {
  if (spec.shots < 1) throw new Error("shots must be >= 1");
  const backbone: Backbone = makeBackbone(spec.backbone, spec.seed);

  const classNames = fs
    .readdirSync(spec.imagesDir, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort();
  if (classNames.length === 0) {
    throw new Error(`no class subfolders under ${spec.imagesDir}`);
  }

  const records: FeatureRecord[] = [];
  let skipped = 0;
  classNames.forEach((name, label) => {
    const dir = path.join(spec.imagesDir, name);
    const files = fs.readdirSync(dir).filter((f) => !f.startsWith(".")).sort();
    const rng = new Rng(spec.seed ^ (label * 0x9e3779b9));
    const chosen = rng.shuffle([...files]).slice(0, spec.shots);
    chosen.sort();
    for (const file of chosen) {
      const full = path.join(dir, file);
      let features;
      try {
        features = backbone.extract(decodeNetpbm(fs.readFileSync(full)));
      } catch (err) {
        warn(`skipping unreadable image ${full}: ${(err as Error).message}`);
        skipped++;
        continue;
      }
      records.push({ label, global: features.global, locals: features.locals });
    }
  });

  fs.writeFileSync(
    spec.outPath,
    encodeFeatureFile({
      d: backbone.d,
      L: backbone.L,
      classNames,
      records,
    })
  );
  return {
    classNames,
    recordCount: records.length,
    skipped,
    d: backbone.d,
    L: backbone.L,
  };
}
