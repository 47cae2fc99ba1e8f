/**
 * Deterministic sample images for demos and tests: a colored gradient
 * background with a bright disc and a dark square whose positions vary
 * per image index.  Written as P6 PPM.
 */

import * as fs from "fs";
import * as path from "path";

import { RgbImage, encodePpm } from "./image";

export function sampleImage(index: number, size = 224): RgbImage {
  const data = new Float32Array(size * size * 3);
  const cx = size * (0.35 + 0.15 * (index % 3));
  const cy = size * (0.4 + 0.1 * ((index + 1) % 3));
  const r = size * 0.12;
  const sq = size * (0.62 - 0.05 * (index % 4));
  const sqSize = size * 0.18;
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const i = 3 * (y * size + x);
      data[i] = 0.2 + (0.6 * x) / size;
      data[i + 1] = 0.2 + (0.6 * y) / size;
      data[i + 2] = 0.35;
      const d = Math.hypot(x - cx, y - cy);
      if (d < r) {
        const glow = 1 - d / r;
        data[i] = Math.min(1, data[i] + glow);
        data[i + 1] = Math.min(1, data[i + 1] + 0.8 * glow);
        data[i + 2] = Math.min(1, data[i + 2] + 0.3 * glow);
      }
      if (x > sq && x < sq + sqSize && y > sq && y < sq + sqSize) {
        data[i] *= 0.25;
        data[i + 1] *= 0.25;
        data[i + 2] *= 0.25;
      }
    }
  }
  return { width: size, height: size, data };
}

export function writeSamples(outDir: string, count = 3, size = 224): string[] {
  fs.mkdirSync(outDir, { recursive: true });
  const written: string[] = [];
  for (let i = 0; i < count; i++) {
    const file = path.join(outDir, `sample-${i}.ppm`);
    fs.writeFileSync(file, encodePpm(sampleImage(i, size)));
    written.push(file);
  }
  return written;
}

if (require.main === module) {
  const outDir = process.argv[2] ?? "samples";
  const count = parseInt(process.argv[3] ?? "3", 10);
  const files = writeSamples(outDir, count);
  console.error(`wrote ${files.length} sample images to ${outDir}`);
}
