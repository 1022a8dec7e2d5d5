/**
 * Extraction manifests.
 *
 * A manifest is a JSON file describing one extraction job: where the
 * image folders live, which files belong to which class and split,
 * which backbone and prompt template to use, and where the cache goes.
 * Relative paths are resolved against the manifest's own directory.
 *
 * Example:
 *
 *     {
 *       "datasetRoot": "images",
 *       "backbone": "test-hash-64",
 *       "template": "a photo of a {class}",
 *       "output": "pets.embc",
 *       "normalize": true,
 *       "classes": [
 *         { "name": "cat", "train": ["001.png", "002.png"], "test": ["003.png"] },
 *         { "name": "dog", "train": ["004.png"], "test": ["005.png"] }
 *       ]
 *     }
 *
 * Images for class `name` live in `<datasetRoot>/<name>/`.
 */

import { readFile, stat } from 'node:fs/promises'
import { dirname, join, resolve } from 'node:path'

import { SPLIT_TAGS, type SplitName } from './embc.js'
import { validateTemplate } from './prompts.js'

export interface ManifestClass {
  name: string
  /** file names per split, relative to <datasetRoot>/<name>/ */
  files: Record<SplitName, string[]>
}

export interface ExtractionManifest {
  datasetRoot: string
  backbone: string
  template: string
  output: string
  normalize: boolean
  classes: ManifestClass[]
}

export class ManifestError extends Error {}

const SPLIT_NAMES = Object.keys(SPLIT_TAGS) as SplitName[]

function asStringArray(value: unknown, where: string): string[] {
  if (value === undefined) {
    return []
  }
  if (!Array.isArray(value) || value.some(item => typeof item !== 'string')) {
    throw new ManifestError(`${where} must be an array of file names`)
  }
  return value as string[]
}

function requireString(value: unknown, where: string): string {
  if (typeof value !== 'string' || value.length === 0) {
    throw new ManifestError(`${where} must be a non-empty string`)
  }
  return value
}

/** Parse and shape-check a manifest object (no filesystem access yet). */
export function parseManifest(raw: unknown, baseDir: string): ExtractionManifest {
  if (typeof raw !== 'object' || raw === null || Array.isArray(raw)) {
    throw new ManifestError('manifest must be a JSON object')
  }
  const record = raw as Record<string, unknown>
  const datasetRoot = resolve(baseDir, requireString(record.datasetRoot, 'datasetRoot'))
  const backbone = requireString(record.backbone, 'backbone')
  const template = requireString(record.template, 'template')
  validateTemplate(template)
  const output = resolve(baseDir, requireString(record.output, 'output'))
  const normalize = record.normalize === undefined ? true : record.normalize
  if (typeof normalize !== 'boolean') {
    throw new ManifestError('normalize must be a boolean')
  }

  if (!Array.isArray(record.classes) || record.classes.length < 2) {
    throw new ManifestError('classes must list at least 2 entries')
  }
  const classes = record.classes.map((entry, index) => {
    if (typeof entry !== 'object' || entry === null) {
      throw new ManifestError(`classes[${index}] must be an object`)
    }
    const klass = entry as Record<string, unknown>
    const name = requireString(klass.name, `classes[${index}].name`)
    if (name.includes('/') || name.includes('\\') || name === '.' || name === '..') {
      throw new ManifestError(`classes[${index}].name ${JSON.stringify(name)} is not a valid folder name`)
    }
    const files = Object.fromEntries(
      SPLIT_NAMES.map(split => [split, asStringArray(klass[split], `classes[${index}].${split}`)]),
    ) as Record<SplitName, string[]>
    return { name, files }
  })

  const names = classes.map(klass => klass.name)
  if (new Set(names).size !== names.length) {
    throw new ManifestError('class names must be unique')
  }
  const totalFiles = classes.reduce(
    (total, klass) => total + SPLIT_NAMES.reduce((n, split) => n + klass.files[split].length, 0),
    0,
  )
  if (totalFiles < classes.length) {
    throw new ManifestError(
      `manifest lists ${totalFiles} images for ${classes.length} classes; need at least one per class on average`,
    )
  }
  return { datasetRoot, backbone, template, output, normalize, classes }
}

export function imagePath(manifest: ExtractionManifest, className: string, file: string): string {
  return join(manifest.datasetRoot, className, file)
}

/** Check the manifest against the filesystem: every class folder and
 *  every listed image file must exist. */
export async function checkManifestFiles(manifest: ExtractionManifest): Promise<void> {
  for (const klass of manifest.classes) {
    const folder = join(manifest.datasetRoot, klass.name)
    let folderStat
    try {
      folderStat = await stat(folder)
    } catch {
      throw new ManifestError(`class folder missing: ${folder}`)
    }
    if (!folderStat.isDirectory()) {
      throw new ManifestError(`class folder is not a directory: ${folder}`)
    }
    for (const split of SPLIT_NAMES) {
      for (const file of klass.files[split]) {
        const path = imagePath(manifest, klass.name, file)
        try {
          await stat(path)
        } catch {
          throw new ManifestError(`listed image file missing: ${path}`)
        }
      }
    }
  }
}

export async function loadManifest(path: string): Promise<ExtractionManifest> {
  const text = await readFile(path, 'utf8')
  let raw: unknown
  try {
    raw = JSON.parse(text)
  } catch (error) {
    throw new ManifestError(`manifest is not valid JSON: ${(error as Error).message}`)
  }
  const manifest = parseManifest(raw, dirname(resolve(path)))
  await checkManifestFiles(manifest)
  return manifest
}
