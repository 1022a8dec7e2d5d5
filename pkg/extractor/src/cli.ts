#!/usr/bin/env node
/**
 * Command line entry point:
 *
 *     embadapt-extract extract --manifest m.json
 */

import { pathToFileURL } from 'node:url'

import { extract } from './extract.js'
import { loadManifest, ManifestError } from './manifest.js'
import { TemplateError } from './prompts.js'
import { UnknownBackboneError } from './encoder.js'

const USAGE = 'usage: embadapt-extract extract --manifest <m.json>'

export async function runCli(argv: string[]): Promise<number> {
  if (argv[0] !== 'extract') {
    console.error(USAGE)
    return 1
  }
  let manifestPath: string | undefined
  for (let i = 1; i < argv.length; i++) {
    if (argv[i] === '--manifest') {
      manifestPath = argv[++i]
    } else {
      console.error(`unknown argument ${argv[i]}\n${USAGE}`)
      return 1
    }
  }
  if (manifestPath === undefined) {
    console.error(USAGE)
    return 1
  }

  try {
    const manifest = await loadManifest(manifestPath)
    const result = await extract(manifest)
    console.log(
      `wrote ${result.cachePath}: ${result.numImages} images, ` +
        `${result.numClasses} classes, dim ${result.dim}`,
    )
    if (result.skipped.length > 0) {
      console.log(`skipped ${result.skipped.length} undecodable image(s); see ${result.skipLogPath}`)
    }
    return 0
  } catch (error) {
    if (
      error instanceof ManifestError ||
      error instanceof TemplateError ||
      error instanceof UnknownBackboneError
    ) {
      console.error(`error: ${(error as Error).message}`)
      return 1
    }
    if (error instanceof Error && 'code' in error && error.code === 'ENOENT') {
      console.error(`error: ${error.message}`)
      return 2
    }
    throw error
  }
}

const invokedDirectly =
  process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href
if (invokedDirectly) {
  runCli(process.argv.slice(2)).then(
    code => process.exit(code),
    error => {
      console.error(error)
      process.exit(1)
    },
  )
}
