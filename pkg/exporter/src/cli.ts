#!/usr/bin/env node
/**
 * trialign-export: offline caption/embedding exporter.
 *
 * Commands:
 *   export-captions    --images LIST.tsv --out DIR [--n 10] [--captioner ID]
 *   export-embeddings  (--images LIST.tsv | --captions FILE.tsv | --labels FILE.txt)
 *                      --out DIR [--name NAME] [--dim 64] [--embedder ID]
 *   export-triplets    --images LIST.tsv --captions FILE.tsv --out DIR
 *                      [--dim 64] [--embedder ID] [--clouds-prefix clouds]
 *   export-pair        --image FILE.pgm --caption TEXT --out DIR [--dim 64]
 *
 * Image lists are TSV: shape_id<TAB>view_index<TAB>path (paths relative to
 * the list file). Caption files are shape_id<TAB>view_index<TAB>text.
 */

import * as fs from "node:fs";
import { pathToFileURL } from "node:url";

import { DEFAULT_CAPTIONER, resolveCaptioner } from "./captioner.js";
import { DEFAULT_EMBEDDER, resolveEmbedder } from "./backends.js";
import {
  exportCaptionCandidates,
  exportImageTable,
  exportPair,
  exportTextTable,
  exportTriplets,
  readCaptionFile,
  readImageList,
} from "./export.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    if (!argv[i].startsWith("--")) {
      throw new Error(`unexpected argument ${argv[i]}`);
    }
    const key = argv[i].slice(2);
    if (i + 1 >= argv.length) throw new Error(`flag --${key} needs a value`);
    flags.set(key, argv[++i]);
    }
  return flags;
}

function need(flags: Map<string, string>, key: string): string {
  const v = flags.get(key);
  if (v === undefined) throw new Error(`missing required flag --${key}`);
  return v;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    const flags = parseFlags(rest);
    const dim = Number(flags.get("dim") ?? 64);
    switch (command) {
      case "export-captions": {
        const images = readImageList(need(flags, "images"));
        const captioner = resolveCaptioner(flags.get("captioner") ?? DEFAULT_CAPTIONER);
        const n = Number(flags.get("n") ?? 10);
        const result = exportCaptionCandidates(images, captioner, n, need(flags, "out"));
        console.log(JSON.stringify({
          captioned: result.captioned,
          failed: result.failed.length,
          captions: result.captionsPath,
        }));
        return 0;
      }
      case "export-embeddings": {
        const backend = resolveEmbedder(flags.get("embedder") ?? DEFAULT_EMBEDDER, dim);
        const out = need(flags, "out");
        if (flags.has("images")) {
          const n = exportImageTable(readImageList(need(flags, "images")), backend,
                                     out, flags.get("name") ?? "images.ulp2");
          console.log(JSON.stringify({ rows: n, dim }));
        } else if (flags.has("captions")) {
          const texts = readCaptionFile(need(flags, "captions")).map((c) => c.text);
          const n = exportTextTable(texts, backend, out,
                                    flags.get("name") ?? "texts.ulp2");
          console.log(JSON.stringify({ rows: n, dim }));
        } else if (flags.has("labels")) {
          const names = fs.readFileSync(need(flags, "labels"), "utf8")
            .split("\n").map((s) => s.trim()).filter(Boolean);
          const n = exportTextTable(names, backend, out,
                                    flags.get("name") ?? "labels.ulp2");
          console.log(JSON.stringify({ rows: n, dim }));
        } else {
          throw new Error("export-embeddings needs --images, --captions, or --labels");
        }
        return 0;
      }
      case "export-triplets": {
        const backend = resolveEmbedder(flags.get("embedder") ?? DEFAULT_EMBEDDER, dim);
        const result = exportTriplets(
          readImageList(need(flags, "images")),
          readCaptionFile(need(flags, "captions")),
          backend,
          need(flags, "out"),
          flags.get("clouds-prefix") ?? "clouds",
        );
        console.log(JSON.stringify(result));
        return 0;
      }
      case "export-pair": {
        const backend = resolveEmbedder(flags.get("embedder") ?? DEFAULT_EMBEDDER, dim);
        const result = exportPair(need(flags, "image"), need(flags, "caption"),
                                  backend, need(flags, "out"));
        console.log(JSON.stringify(result));
        return 0;
      }
      default:
        console.error(`unknown command ${command ?? "(none)"}; see source header for usage`);
        return 1;
    }
  } catch (e) {
    console.error(`error: ${e instanceof Error ? e.message : e}`);
    return 2;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
