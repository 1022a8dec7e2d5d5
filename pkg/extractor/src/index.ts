export {
  CacheFormatError,
  decodeCache,
  encodeCache,
  FORMAT_VERSION,
  HEADER_SIZE,
  MAGIC,
  SPLIT_TAGS,
  type CacheData,
  type SplitName,
} from './embc.js'
export {
  DEFAULT_TEMPLATES,
  PLACEHOLDER,
  renderPrompts,
  TemplateError,
  validateTemplate,
} from './prompts.js'
export {
  ImageDecodeError,
  registerEncoder,
  resolveEncoder,
  sniffImageFormat,
  UnknownBackboneError,
  type Encoder,
} from './encoder.js'
export {
  checkManifestFiles,
  imagePath,
  loadManifest,
  ManifestError,
  parseManifest,
  type ExtractionManifest,
  type ManifestClass,
} from './manifest.js'
export {
  extract,
  ExtractionError,
  skipLogPathFor,
  type ExtractionResult,
  type SkippedImage,
} from './extract.js'
export { runCli } from './cli.js'
