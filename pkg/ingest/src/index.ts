export { ExtractionError, pdfToText } from './extract.js';
export { ingestDirectory } from './ingest.js';
export { MANIFEST_FORMAT, MANIFEST_VERSION, renderManifest } from './manifest.js';
export type { ManifestEntry } from './manifest.js';
