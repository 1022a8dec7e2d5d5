/**
 * The extraction pipeline: image folders + prompted class names in,
 * one engine-ready cache file out.
 */

import { mkdir, readFile, rename, rm, writeFile } from 'node:fs/promises'
import { randomBytes } from 'node:crypto'
import { dirname } from 'node:path'

import { SPLIT_TAGS, encodeCache, type CacheData, type SplitName } from './embc.js'
import { ImageDecodeError, resolveEncoder, type Encoder } from './encoder.js'
import { imagePath, type ExtractionManifest } from './manifest.js'
import { renderPrompts } from './prompts.js'

export interface SkippedImage {
  className: string
  split: SplitName
  file: string
  reason: string
}

export interface ExtractionResult {
  cachePath: string
  numImages: number
  numClasses: number
  dim: number
  skipped: SkippedImage[]
  /** present when any image was skipped */
  skipLogPath?: string
}

export class ExtractionError extends Error {}

const SPLIT_NAMES = Object.keys(SPLIT_TAGS) as SplitName[]

/** Unit-normalize in float64, then round back to float32. */
function normalizeRow(row: Float32Array): Float32Array {
  let sumSquares = 0
  for (const value of row) {
    sumSquares += value * value
  }
  const norm = Math.sqrt(sumSquares)
  if (norm < 1e-12) {
    throw new ExtractionError('encoder produced a zero embedding; cannot normalize')
  }
  return Float32Array.from(row, value => value / norm)
}

function checkWidth(vector: Float32Array, encoder: Encoder, what: string): Float32Array {
  if (vector.length !== encoder.dim) {
    throw new ExtractionError(
      `${encoder.id} returned ${vector.length} values for ${what}, expected ${encoder.dim}`,
    )
  }
  return vector
}

/** Write a file atomically: temp file in the same directory, then rename. */
async function atomicWrite(path: string, payload: Buffer | string): Promise<void> {
  await mkdir(dirname(path), { recursive: true })
  const temp = `${path}.tmp-${randomBytes(6).toString('hex')}`
  try {
    await writeFile(temp, payload)
    await rename(temp, path)
  } catch (error) {
    await rm(temp, { force: true })
    throw error
  }
}

export function skipLogPathFor(output: string): string {
  return `${output}.skipped.json`
}

export async function extract(manifest: ExtractionManifest): Promise<ExtractionResult> {
  const encoder = await resolveEncoder(manifest.backbone)
  const classNames = manifest.classes.map(klass => klass.name)

  const prompts = renderPrompts(manifest.template, classNames)
  const weightRows: Float32Array[] = []
  for (const prompt of prompts) {
    let row = checkWidth(await encoder.encodeText(prompt), encoder, `prompt ${JSON.stringify(prompt)}`)
    if (manifest.normalize) {
      row = normalizeRow(row)
    }
    weightRows.push(row)
  }

  const featureRows: Float32Array[] = []
  const labels: number[] = []
  const splitTags: number[] = []
  const skipped: SkippedImage[] = []

  for (const [label, klass] of manifest.classes.entries()) {
    for (const split of SPLIT_NAMES) {
      for (const file of klass.files[split]) {
        const path = imagePath(manifest, klass.name, file)
        const bytes = await readFile(path)
        let row: Float32Array
        try {
          row = checkWidth(await encoder.encodeImage(bytes), encoder, path)
        } catch (error) {
          if (error instanceof ImageDecodeError) {
            const entry = { className: klass.name, split, file, reason: error.message }
            skipped.push(entry)
            console.warn(`warning: skipping undecodable image ${path}: ${error.message}`)
            continue
          }
          throw error
        }
        featureRows.push(manifest.normalize ? normalizeRow(row) : row)
        labels.push(label)
        splitTags.push(SPLIT_TAGS[split])
      }
    }
  }

  const numImages = featureRows.length
  if (numImages < classNames.length) {
    throw new ExtractionError(
      `only ${numImages} images survived decoding for ${classNames.length} classes; ` +
        'the engine needs at least one image per class',
    )
  }

  const dim = encoder.dim
  const cache: CacheData = {
    dim,
    imageFeatures: concatRows(featureRows, dim),
    labels: Uint32Array.from(labels),
    splitTags: Uint8Array.from(splitTags),
    classNames,
    classifierWeights: concatRows(weightRows, dim),
    normalized: manifest.normalize,
  }
  await atomicWrite(manifest.output, encodeCache(cache))

  const logPath = skipLogPathFor(manifest.output)
  if (skipped.length > 0) {
    await atomicWrite(logPath, JSON.stringify({ skipped }, null, 2) + '\n')
  } else {
    await rm(logPath, { force: true })
  }

  return {
    cachePath: manifest.output,
    numImages,
    numClasses: classNames.length,
    dim,
    skipped,
    ...(skipped.length > 0 ? { skipLogPath: logPath } : {}),
  }
}

function concatRows(rows: Float32Array[], dim: number): Float32Array {
  const out = new Float32Array(rows.length * dim)
  rows.forEach((row, index) => out.set(row, index * dim))
  return out
}
