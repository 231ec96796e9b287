#!/usr/bin/env node
/** gallop-export export --backbone B --images DIR --shots K --out FILE --seed S */

import { runExport } from "./export.js";

const USAGE =
  "usage: gallop-export export --backbone <toy-vit|toy-resnet> --images DIR " +
  "--shots K --out FILE [--seed S]";

function parseArgs(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`bad argument ${key}`);
    }
    flags.set(key.slice(2), argv[i + 1]);
  }
  return flags;
}

export function main(argv: string[]): number {
  if (argv[0] !== "export") {
    console.error(USAGE);
    return 1;
  }
  let flags: Map<string, string>;
  try {
    flags = parseArgs(argv.slice(1));
  } catch (err) {
    console.error((err as Error).message);
    console.error(USAGE);
    return 1;
  }
  for (const required of ["backbone", "images", "shots", "out"]) {
    if (!flags.has(required)) {
      console.error(`missing --${required}`);
      console.error(USAGE);
      return 1;
    }
  }
  const spec = {
    backbone: flags.get("backbone")!,
    imagesDir: flags.get("images")!,
    shots: parseInt(flags.get("shots")!, 10),
    outPath: flags.get("out")!,
    seed: parseInt(flags.get("seed") ?? "0", 10),
  };
  console.log(`resolved: ${JSON.stringify(spec)}`);
  try {
    const report = runExport(spec);
    console.log(
      `wrote ${spec.outPath}: ${report.recordCount} records, d=${report.d}, ` +
        `L=${report.L}, classes=[${report.classNames.join(", ")}]` +
        (report.skipped ? `, skipped ${report.skipped}` : "")
    );
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
}

process.exit(main(process.argv.slice(2)));
