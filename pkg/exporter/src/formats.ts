import * as fs from 'fs'

/**
 * Writers for the embedding engine's two file formats.
 *
 * CSV: one `label,v1,...,vd` record per line, values at up to 9
 * significant digits. Binary: `TEAMEMB1` magic, little-endian u32 record
 * count and dimension, then per record a u32 label and d little-endian
 * f32 values.
 */
export interface EmbeddingRecord {
  label: number
  values: Float32Array
}

export type EmbeddingFormat = 'csv' | 'bin'

const MAGIC = 'TEAMEMB1'

function formatValue(v: number): string {
  if (!Number.isFinite(v)) throw new Error(`non-finite feature value ${v}`)
  return String(Number(v.toPrecision(9)))
}

export function writeCsv(records: EmbeddingRecord[], path: string): void {
  const lines = records.map(
    r => `${r.label},` + Array.from(r.values, formatValue).join(','),
  )
  fs.writeFileSync(path, lines.join('\n') + '\n', 'ascii')
}

export function writeBinary(records: EmbeddingRecord[], path: string): void {
  const n = records.length
  const d = records[0].values.length
  const buffer = Buffer.alloc(16 + n * (4 + 4 * d))
  buffer.write(MAGIC, 0, 'ascii')
  buffer.writeUInt32LE(n, 8)
  buffer.writeUInt32LE(d, 12)
  let offset = 16
  for (const r of records) {
    buffer.writeUInt32LE(r.label >>> 0, offset)
    offset += 4
    for (let i = 0; i < d; i++) {
      buffer.writeFloatLE(r.values[i], offset)
      offset += 4
    }
  }
  fs.writeFileSync(path, buffer)
}

export function writeRecords(
  records: EmbeddingRecord[],
  path: string,
  format: EmbeddingFormat,
): void {
  if (records.length === 0) throw new Error('no records to write')
  const d = records[0].values.length
  for (const r of records) {
    if (r.values.length !== d) {
      throw new Error(`record dimension ${r.values.length} != ${d}`)
    }
  }
  if (format === 'csv') writeCsv(records, path)
  else writeBinary(records, path)
}

/** Minimal binary reader, used by the exporter's own tests. */
export function readBinary(path: string): { records: EmbeddingRecord[] } {
  const buffer = fs.readFileSync(path)
  if (buffer.toString('ascii', 0, 8) !== MAGIC) {
    throw new Error(`bad magic in ${path}`)
  }
  const n = buffer.readUInt32LE(8)
  const d = buffer.readUInt32LE(12)
  const records: EmbeddingRecord[] = []
  let offset = 16
  for (let i = 0; i < n; i++) {
    const label = buffer.readUInt32LE(offset)
    offset += 4
    const values = new Float32Array(d)
    for (let j = 0; j < d; j++) {
      values[j] = buffer.readFloatLE(offset)
      offset += 4
    }
    records.push({ label, values })
  }
  return { records }
}
