import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { runExport } from "../src/export.js";
import { decodeFeatureFile } from "../src/format.js";
import { writeToyFolder } from "./fixtures.js";

let root: string;

beforeEach(() => {
  root = fs.mkdtempSync(path.join(os.tmpdir(), "gallop-export-"));
});

afterEach(() => {
  fs.rmSync(root, { recursive: true, force: true });
});

describe("export", () => {
  it("writes a conforming file with one record per shot per class", () => {
    writeToyFolder(path.join(root, "images"), 2, 4);
    const out = path.join(root, "toy.glf");
    const report = runExport({
      backbone: "toy-vit",
      imagesDir: path.join(root, "images"),
      shots: 2,
      outPath: out,
      seed: 3,
    });
    expect(report.recordCount).toBe(4);
    expect(report.classNames).toEqual(["class_0", "class_1"]);
    const file = decodeFeatureFile(fs.readFileSync(out));
    expect(file.d).toBe(report.d);
    expect(file.L).toBe(report.L);
    expect(file.records.length).toBe(4);
    expect(file.records.map((r) => r.label)).toEqual([0, 0, 1, 1]);
    for (const rec of file.records) {
      expect(Math.hypot(...rec.global)).toBeCloseTo(1, 5);
    }
  });

  it("is deterministic: same spec, identical bytes", () => {
    writeToyFolder(path.join(root, "images"), 2, 5);
    const outA = path.join(root, "a.glf");
    const outB = path.join(root, "b.glf");
    const spec = {
      backbone: "toy-resnet",
      imagesDir: path.join(root, "images"),
      shots: 3,
      outPath: outA,
      seed: 9,
    };
    runExport(spec);
    runExport({ ...spec, outPath: outB });
    expect(fs.readFileSync(outA).equals(fs.readFileSync(outB))).toBe(true);
  });

  it("shot sampling depends on the seed", () => {
    writeToyFolder(path.join(root, "images"), 1, 8);
    const outA = path.join(root, "a.glf");
    const outB = path.join(root, "b.glf");
    const spec = {
      backbone: "toy-vit",
      imagesDir: path.join(root, "images"),
      shots: 2,
      outPath: outA,
      seed: 1,
    };
    runExport(spec);
    runExport({ ...spec, outPath: outB, seed: 2 });
    expect(fs.readFileSync(outA).equals(fs.readFileSync(outB))).toBe(false);
  });

  it("skips unreadable images with a warning and count", () => {
    writeToyFolder(path.join(root, "images"), 1, 3);
    fs.writeFileSync(path.join(root, "images", "class_0", "img_0.ppm"), "not an image");
    const warnings: string[] = [];
    const report = runExport(
      {
        backbone: "toy-vit",
        imagesDir: path.join(root, "images"),
        shots: 3,
        outPath: path.join(root, "out.glf"),
        seed: 0,
      },
      (msg) => warnings.push(msg)
    );
    expect(report.skipped).toBe(1);
    expect(report.recordCount).toBe(2);
    expect(warnings.length).toBe(1);
    expect(warnings[0]).toContain("img_0.ppm");
  });

  it("rejects an empty image root", () => {
    fs.mkdirSync(path.join(root, "empty"));
    expect(() =>
      runExport({
        backbone: "toy-vit",
        imagesDir: path.join(root, "empty"),
        shots: 1,
        outPath: path.join(root, "x.glf"),
        seed: 0,
      })
    ).toThrow(/class subfolders/);
  });
});
