// Usage: matex-ingest <pdf input dir> <output dir> [manifest name]

import { ingestDirectory } from './ingest.js';

async function main(): Promise<number> {
  const [inputDir, outDir, manifestName] = process.argv.slice(2);
  if (!inputDir || !outDir) {
    console.error('usage: matex-ingest <pdf input dir> <output dir> [manifest name]');
    return 2;
  }
  const { manifestPath, entries } = await ingestDirectory(inputDir, outDir, manifestName);
  let failures = 0;
  for (const entry of entries) {
    if (entry.error) {
      failures += 1;
      console.error(`FAILED ${entry.paper_id}: ${entry.error}`);
    } else if (entry.warning) {
      console.error(`warning ${entry.paper_id}: ${entry.warning}`);
    }
  }
  console.log(`${entries.length - failures}/${entries.length} pdf(s) converted -> ${manifestPath}`);
  return 0;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(err);
    process.exit(1);
  },
);
