/**
 * Codec for the PEAR v1 binary dataset format.
 *
 * Layout: magic "PEAR", version byte 1, dtype byte 1 (float32), two zero
 * bytes, u32 n, u32 d (little-endian), n*d float32 values row-major, then
 * "PLBL", u32 n, n signed 32-bit labels. Label -1 marks an unlabeled row.
 */

export interface Dataset {
  /** n rows of d numbers each */
  embeddings: number[][];
  /** n integer class labels; -1 means unlabeled */
  labels: number[];
}

const MAGIC = Buffer.from('PEAR', 'ascii');
const LABEL_MAGIC = Buffer.from('PLBL', 'ascii');
const VERSION = 1;
const DTYPE_F32 = 1;

export function encodePear(embeddings: number[][], labels: number[]): Buffer {
  const n = embeddings.length;
  if (labels.length !== n) {
    throw new Error(`labels length ${labels.length} does not match ${n} rows`);
  }
  const d = n > 0 ? embeddings[0].length : 1;
  for (let i = 0; i < n; i++) {
    if (embeddings[i].length !== d) {
      throw new Error(`ragged row at row ${i}: expected ${d} values`);
    }
  }
  const header = Buffer.alloc(16);
  MAGIC.copy(header, 0);
  header[4] = VERSION;
  header[5] = DTYPE_F32;
  header.writeUInt32LE(n, 8);
  header.writeUInt32LE(d, 12);

  const values = Buffer.alloc(4 * n * d);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < d; j++) {
      const v = embeddings[i][j];
      if (!Number.isFinite(v)) {
        throw new Error(`non-finite value at row ${i}`);
      }
      values.writeFloatLE(Math.fround(v), 4 * (i * d + j));
    }
  }

  const tail = Buffer.alloc(8 + 4 * n);
  LABEL_MAGIC.copy(tail, 0);
  tail.writeUInt32LE(n, 4);
  for (let i = 0; i < n; i++) {
    if (!Number.isInteger(labels[i]) || labels[i] < -1) {
      throw new Error(`invalid label at row ${i}: ${labels[i]}`);
    }
    tail.writeInt32LE(labels[i], 8 + 4 * i);
  }
  return Buffer.concat([header, values, tail]);
}

export function decodePear(buf: Buffer): Dataset {
  if (buf.length < 16 || !buf.subarray(0, 4).equals(MAGIC)) {
    throw new Error('unknown magic bytes at byte offset 0');
  }
  if (buf[4] !== VERSION) {
    throw new Error(`unsupported version ${buf[4]} at byte offset 4`);
  }
  if (buf[5] !== DTYPE_F32) {
    throw new Error(`unsupported dtype ${buf[5]} at byte offset 5`);
  }
  const n = buf.readUInt32LE(8);
  const d = buf.readUInt32LE(12);
  let off = 16;
  if (buf.length < off + 4 * n * d + 8 + 4 * n) {
    throw new Error(`truncated file at byte offset ${buf.length}`);
  }
  const embeddings: number[][] = new Array(n);
  for (let i = 0; i < n; i++) {
    const row = new Array<number>(d);
    for (let j = 0; j < d; j++) {
      row[j] = buf.readFloatLE(off + 4 * (i * d + j));
    }
    embeddings[i] = row;
  }
  off += 4 * n * d;
  if (!buf.subarray(off, off + 4).equals(LABEL_MAGIC)) {
    throw new Error(`missing label magic at byte offset ${off}`);
  }
  if (buf.readUInt32LE(off + 4) !== n) {
    throw new Error(`label count mismatch at byte offset ${off + 4}`);
  }
  off += 8;
  const labels = new Array<number>(n);
  for (let i = 0; i < n; i++) {
    labels[i] = buf.readInt32LE(off + 4 * i);
  }
  return { embeddings, labels };
}
