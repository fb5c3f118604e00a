// PDF -> plain text in the extraction library's reading order.
// No additional normalization: tables flatten to text but keep their
// numerals, images are skipped, and identical input bytes always produce
// identical output text.

import fs from 'node:fs';
import { getDocument } from 'pdfjs-dist/legacy/build/pdf.mjs';
import type { TextItem } from 'pdfjs-dist/types/src/display/api.js';

export class ExtractionError extends Error {
  constructor(message: string, readonly kind: 'encrypted' | 'corrupt') {
    super(message);
    this.name = 'ExtractionError';
  }
}

export async function pdfToText(pdfPath: string): Promise<string> {
  const data = new Uint8Array(fs.readFileSync(pdfPath));
  const task = getDocument({
    data,
    useSystemFonts: true,
    verbosity: 0,
  });
  try {
    let doc;
    try {
      doc = await task.promise;
    } catch (err: any) {
      if (err?.name === 'PasswordException') {
        throw new ExtractionError(`password protected: ${err.message}`, 'encrypted');
      }
      throw new ExtractionError(`unreadable pdf: ${err?.message ?? err}`, 'corrupt');
    }
    const pages: string[] = [];
    for (let pageNum = 1; pageNum <= doc.numPages; pageNum++) {
      const page = await doc.getPage(pageNum);
      const content = await page.getTextContent();
      let out = '';
      for (const item of content.items) {
        if (!('str' in item)) continue; // marked-content items carry no text
        const text = item as TextItem;
        out += text.str;
        out += text.hasEOL ? '\n' : ' ';
      }
      pages.push(out.trimEnd());
    }
    return pages.join('\n\n').trimEnd() + '\n';
  } finally {
    await task.destroy();
  }
}
