import fs from 'node:fs';
import path from 'node:path';
import { ExtractionError, pdfToText } from './extract.js';
import { ManifestEntry, relativeTo, renderManifest } from './manifest.js';

export interface IngestResult {
  manifestPath: string;
  entries: ManifestEntry[];
}

/** Convert every PDF in inputDir to a sidecar .txt under outDir and write a
 * manifest. Unreadable PDFs get an error entry and no text file. */
export async function ingestDirectory(inputDir: string, outDir: string,
                                      manifestName = 'manifest.jsonl'): Promise<IngestResult> {
  const pdfs = fs.readdirSync(inputDir)
    .filter((name) => name.toLowerCase().endsWith('.pdf'))
    .sort();
  fs.mkdirSync(outDir, { recursive: true });
  const manifestPath = path.join(outDir, manifestName);

  const entries: ManifestEntry[] = [];
  for (const name of pdfs) {
    const paperId = name.replace(/\.pdf$/i, '');
    const pdfPath = path.join(inputDir, name);
    try {
      const text = await pdfToText(pdfPath);
      const textPath = path.join(outDir, `${paperId}.txt`);
      fs.writeFileSync(textPath, text, 'utf8');
      const entry: ManifestEntry = {
        paper_id: paperId,
        text: relativeTo(manifestPath, textPath),
        gt: null,
      };
      if (!text.trim()) entry.warning = 'no extractable text (scanned pdf?)';
      entries.push(entry);
    } catch (err) {
      if (err instanceof ExtractionError) {
        entries.push({ paper_id: paperId, text: null, gt: null, error: err.message });
        continue;
      }
      throw err;
    }
  }
  fs.writeFileSync(manifestPath, renderManifest(entries), 'utf8');
  return { manifestPath, entries };
}
