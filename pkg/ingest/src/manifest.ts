// Manifest writer in the exact line-delimited format the extraction CLI
// reads: a one-line format/version header, then one entry per paper with
// paths relative to the manifest location.

import path from 'node:path';

export const MANIFEST_FORMAT = 'matex-manifest';
export const MANIFEST_VERSION = 1;

export interface ManifestEntry {
  paper_id: string;
  /** relative path to the text file; null only when error is set */
  text: string | null;
  gt: string | null;
  /** unreadable input: the pipeline skips this paper */
  error?: string;
  /** readable but suspicious (e.g. no extractable text); not a skip */
  warning?: string;
}

export function renderManifest(entries: ManifestEntry[]): string {
  const lines = [JSON.stringify({ format: MANIFEST_FORMAT, version: MANIFEST_VERSION })];
  for (const entry of entries) {
    const obj: Record<string, unknown> = {
      paper_id: entry.paper_id,
      text: entry.text,
      gt: entry.gt,
    };
    if (entry.error) obj.error = entry.error;
    if (entry.warning) obj.warning = entry.warning;
    lines.push(JSON.stringify(obj));
  }
  return lines.join('\n') + '\n';
}

export function relativeTo(manifestPath: string, target: string): string {
  return path.relative(path.dirname(manifestPath), target).split(path.sep).join('/');
}
