/**
 * Batch embedding: manifest CSV in, embeddings CSV out.
 *
 * Manifest columns: town_id, filename (relative to the images directory).
 * Output columns: town_id, v0..v511 — the contract consumed by the
 * road-link pipeline's featurization stage.
 */

import * as fs from 'fs'
import * as path from 'path'
import Papa from 'papaparse'
import { PNG } from 'pngjs'
import { EMBEDDING_DIM, EmbeddingModel } from './model'

export interface ManifestRow {
  town_id: string
  filename: string
}

export function readManifest(manifestPath: string): ManifestRow[] {
  const text = fs.readFileSync(manifestPath, 'utf8')
  const parsed = Papa.parse<ManifestRow>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  })
  if (parsed.errors.length > 0) {
    throw new Error(`malformed manifest ${manifestPath}: ${parsed.errors[0].message}`)
  }
  const rows = parsed.data
  for (const row of rows) {
    if (!row.town_id || !row.filename) {
      throw new Error(`manifest row missing town_id or filename: ${JSON.stringify(row)}`)
    }
  }
  const ids = new Set(rows.map((r) => r.town_id))
  if (ids.size !== rows.length) {
    throw new Error('manifest contains duplicate town ids')
  }
  return rows
}

/** Decode a PNG into [0, 1] RGB floats, dropping any alpha channel. */
export function decodePng(filePath: string): {
  pixels: Float32Array
  height: number
  width: number
} {
  const png = PNG.sync.read(fs.readFileSync(filePath))
  const { width, height, data } = png
  const pixels = new Float32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    pixels[i * 3] = data[i * 4] / 255
    pixels[i * 3 + 1] = data[i * 4 + 1] / 255
    pixels[i * 3 + 2] = data[i * 4 + 2] / 255
  }
  return { pixels, height, width }
}

export function embedDirectory(
  imagesDir: string,
  manifestPath: string,
  outPath: string,
): number {
  const rows = readManifest(manifestPath)
  const model = new EmbeddingModel()
  const lines: string[] = []
  const header = ['town_id']
  for (let i = 0; i < EMBEDDING_DIM; i++) header.push(`v${i}`)
  lines.push(header.join(','))

  // sort for output stability regardless of manifest order
  const ordered = [...rows].sort((a, b) => a.town_id.localeCompare(b.town_id))
  for (const row of ordered) {
    const imagePath = path.join(imagesDir, row.filename)
    if (!fs.existsSync(imagePath)) {
      throw new Error(`image not found: ${imagePath}`)
    }
    const { pixels, height, width } = decodePng(imagePath)
    const vector = model.embed(pixels, height, width)
    const cells: string[] = [row.town_id]
    for (const value of vector) {
      cells.push(value.toString())
    }
    lines.push(cells.join(','))
  }
  model.dispose()
  fs.writeFileSync(outPath, lines.join('\n') + '\n')
  return ordered.length
}
