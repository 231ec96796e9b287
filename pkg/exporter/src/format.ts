/** GLFv1 feature-file writer (and a reader used by the tests).
 *
 * Layout (little-endian): magic "GLFv1\0", u32 d, u32 L, u32 num_classes,
 * u64 num_records, num_classes * (u16 length + utf-8 name), then per record
 * u32 label, d float32 global vector, L*d float32 locals row-major.
 */

export const MAGIC = Buffer.from("GLFv1\0", "ascii");

export interface FeatureRecord {
  label: number;
  global: Float64Array;
  locals: Float64Array[]; // L rows of length d
}

export interface FeatureFile {
  d: number;
  L: number;
  classNames: string[];
  records: FeatureRecord[];
}

export function encodeFeatureFile(file: FeatureFile): Buffer {
  const { d, L, classNames, records } = file;
  const parts: Buffer[] = [MAGIC];
  const header = Buffer.alloc(4 + 4 + 4 + 8);
  header.writeUInt32LE(d, 0);
  header.writeUInt32LE(L, 4);
  header.writeUInt32LE(classNames.length, 8);
  header.writeBigUInt64LE(BigInt(records.length), 12);
  parts.push(header);
  for (const name of classNames) {
    const raw = Buffer.from(name, "utf-8");
    const len = Buffer.alloc(2);
    len.writeUInt16LE(raw.length, 0);
    parts.push(len, raw);
  }
  for (const record of records) {
    if (record.global.length !== d || record.locals.length !== L) {
      throw new Error("record dimensions do not match the header");
    }
    const buf = Buffer.alloc(4 + 4 * d + 4 * L * d);
    buf.writeUInt32LE(record.label, 0);
    let off = 4;
    for (const x of record.global) {
      buf.writeFloatLE(x, off);
      off += 4;
    }
    for (const row of record.locals) {
      if (row.length !== d) throw new Error("local row width does not match d");
      for (const x of row) {
        buf.writeFloatLE(x, off);
        off += 4;
      }
    }
    parts.push(buf);
  }
  return Buffer.concat(parts);
}

export function decodeFeatureFile(buf: Buffer): FeatureFile {
  if (!buf.subarray(0, 6).equals(MAGIC)) {
    throw new Error("bad magic");
  }
  const d = buf.readUInt32LE(6);
  const L = buf.readUInt32LE(10);
  const numClasses = buf.readUInt32LE(14);
  const numRecords = Number(buf.readBigUInt64LE(18));
  let off = 26;
  const classNames: string[] = [];
  for (let i = 0; i < numClasses; i++) {
    const len = buf.readUInt16LE(off);
    off += 2;
    classNames.push(buf.subarray(off, off + len).toString("utf-8"));
    off += len;
  }
  const records: FeatureRecord[] = [];
  for (let r = 0; r < numRecords; r++) {
    const label = buf.readUInt32LE(off);
    off += 4;
    const global = new Float64Array(d);
    for (let i = 0; i < d; i++) {
      global[i] = buf.readFloatLE(off);
      off += 4;
    }
    const locals: Float64Array[] = [];
    for (let i = 0; i < L; i++) {
      const row = new Float64Array(d);
      for (let c = 0; c < d; c++) {
        row[c] = buf.readFloatLE(off);
        off += 4;
      }
      locals.push(row);
    }
    records.push({ label, global, locals });
  }
  if (off !== buf.length) {
    throw new Error("trailing bytes after final record");
  }
  return { d, L, classNames, records };
}
