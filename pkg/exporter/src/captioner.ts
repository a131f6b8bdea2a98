/**
 * Caption backends. As with embedders, the model name is configuration; the
 * shipped implementation writes deterministic descriptions from image
 * statistics so the full pipeline runs offline.
 */

import { GrayImage } from "./pgm.js";

export const DEFAULT_CAPTIONER = "blip2-opt6.7b";
export const OFFLINE_CAPTIONER = "offline-template-v1";

export interface CaptionBackend {
  model: string;
  backend: string;
  describe(img: GrayImage, n: number): string[];
}

interface Stats {
  coverage: number;
  meanDepth: number;
  horiz: string;
  vert: string;
  spread: string;
}

function stats(img: GrayImage): Stats {
  let mass = 0;
  let cx = 0;
  let cy = 0;
  let covered = 0;
  let minX = img.width;
  let maxX = 0;
  let minY = img.height;
  let maxY = 0;
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      const v = img.pixels[y * img.width + x];
      if (v <= 0) continue;
      mass += v;
      cx += v * x;
      cy += v * y;
      covered += 1;
      minX = Math.min(minX, x);
      maxX = Math.max(maxX, x);
      minY = Math.min(minY, y);
      maxY = Math.max(maxY, y);
    }
  }
  const n = img.width * img.height;
  const fx = mass > 0 ? cx / (mass * img.width) : 0.5;
  const fy = mass > 0 ? cy / (mass * img.height) : 0.5;
  const w = covered ? (maxX - minX + 1) / img.width : 0;
  const h = covered ? (maxY - minY + 1) / img.height : 0;
  return {
    coverage: covered / n,
    meanDepth: covered ? mass / covered : 0,
    horiz: fx < 0.4 ? "left of center" : fx > 0.6 ? "right of center" : "centered",
    vert: fy < 0.4 ? "high in the frame" : fy > 0.6 ? "low in the frame" : "vertically centered",
    spread: w > 1.2 * h ? "wider than tall" : h > 1.2 * w ? "taller than wide" : "roughly square",
  };
}

export function resolveCaptioner(model: string = DEFAULT_CAPTIONER): CaptionBackend {
  return {
    model,
    backend: OFFLINE_CAPTIONER,
    describe(img: GrayImage, n: number): string[] {
      const s = stats(img);
      const pct = Math.round(s.coverage * 100);
      const depth = s.meanDepth.toFixed(2);
      const templates = [
        `a rendered object covering about ${pct}% of the frame, ${s.horiz}`,
        `a ${s.spread} silhouette, ${s.vert}, mean depth ${depth}`,
        `depth splat of a solid shape, ${s.horiz} and ${s.vert}`,
        `an object whose footprint is ${s.spread} at ${pct}% coverage`,
        `a gray depth rendering with mean nearness ${depth}, ${s.horiz}`,
        `a compact form occupying ${pct}% of the view, ${s.vert}`,
        `orthographic view of a ${s.spread} object, mean depth ${depth}`,
        `a point-splat image, subject ${s.horiz}, ${s.vert}`,
        `single object scene, ${s.spread}, coverage near ${pct}%`,
        `depth-shaded silhouette ${s.vert} with nearness ${depth}`,
      ];
      const out: string[] = [];
      for (let i = 0; i < n; i++) {
        const base = templates[i % templates.length];
        out.push(i < templates.length ? base : `${base} (variant ${Math.floor(i / templates.length)})`);
      }
      return out;
    },
  };
}
