/**
 * End-to-end conformance: sample images are exported to FVOL1, every
 * volume passes the consumer's validator, and a learn -> parse round on the
 * exported features completes.  The consumer is driven only through its
 * command-line interface, never imported.
 */

import { execFileSync, spawnSync } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { beforeAll, describe, expect, it } from "vitest";

import { decodeNetpbm } from "../src/image";
import { sampleImage, writeSamples } from "../src/samples";
import { encodePpm } from "../src/image";

const PYTHON = process.env.AOGPARTS_PYTHON ?? "python3";
const REPO_ROOT = path.resolve(__dirname, "..", "..");

function runExportCli(args: string[]): { status: number; stderr: string } {
  const res = spawnSync("node", [path.resolve(__dirname, "..", "dist", "export.js"), ...args], {
    encoding: "utf-8",
  });
  return { status: res.status ?? -1, stderr: res.stderr };
}

function runConsumer(args: string[]): { status: number; stderr: string } {
  const res = spawnSync(PYTHON, ["-m", "aogparts.cli", ...args], {
    encoding: "utf-8",
    cwd: REPO_ROOT,
    env: { ...process.env, PYTHONPATH: path.join(REPO_ROOT, "src") },
  });
  return { status: res.status ?? -1, stderr: res.stderr };
}

const consumerAvailable = runConsumer(["--help"]).status === 0;

let work: string;
let imagesDir: string;
let volumesDir: string;

beforeAll(() => {
  execFileSync("npx", ["tsc", "-p", path.resolve(__dirname, "..", "tsconfig.json")], {
    stdio: "inherit",
  });
  work = fs.mkdtempSync(path.join(os.tmpdir(), "fvol-extractor-"));
  imagesDir = path.join(work, "images");
  volumesDir = path.join(work, "volumes");
  writeSamples(imagesDir, 3);
}, 120_000);

describe("sample images", () => {
  it("round-trip through the netpbm codec", () => {
    const img = sampleImage(0);
    const back = decodeNetpbm(encodePpm(img));
    expect(back.width).toBe(224);
    expect(back.height).toBe(224);
    let worst = 0;
    for (let i = 0; i < back.data.length; i++) {
      worst = Math.max(worst, Math.abs(back.data[i] - img.data[i]));
    }
    expect(worst).toBeLessThanOrEqual(0.5 / 255 + 1e-6);
  });
});

describe("export CLI", () => {
  it("exports all nine default layers with audited geometry", () => {
    const res = runExportCli(["--images", imagesDir, "--out", volumesDir]);
    expect(res.status, res.stderr).toBe(0);
    const files = fs.readdirSync(volumesDir).filter((f) => f.endsWith(".fvol"));
    expect(files).toHaveLength(3);
    const audit = JSON.parse(fs.readFileSync(path.join(volumesDir, "geometry.json"), "utf-8"));
    expect(audit.layers).toHaveLength(9);
    const deepest = audit.layers[audit.layers.length - 1];
    expect(deepest.name).toBe("conv5_3");
    expect(deepest.height).toBe(14);
    expect(deepest.width).toBe(14);
    expect(deepest.stride).toBe(16);
  }, 120_000);

  it("rejects unknown layer names", () => {
    const res = runExportCli([
      "--images", imagesDir, "--out", path.join(work, "x"),
      "--layers", "conv7_7",
    ]);
    expect(res.status).toBe(1);
    expect(res.stderr).toMatch(/unknown conv layer/);
  });

  it("is deterministic across runs", () => {
    const again = path.join(work, "again");
    const res = runExportCli(["--images", imagesDir, "--out", again, "--layers", "11-13"]);
    expect(res.status, res.stderr).toBe(0);
    const first = path.join(work, "first");
    const res2 = runExportCli(["--images", imagesDir, "--out", first, "--layers", "11-13"]);
    expect(res2.status).toBe(0);
    for (const f of fs.readdirSync(again).filter((f) => f.endsWith(".fvol"))) {
      const a = fs.readFileSync(path.join(again, f));
      const b = fs.readFileSync(path.join(first, f));
      expect(a.equals(b), f).toBe(true);
    }
  }, 240_000);
});

describe.skipIf(!consumerAvailable)("consumer conformance", () => {
  it("every exported volume passes the validator with zero violations", () => {
    for (const f of fs.readdirSync(volumesDir).filter((f) => f.endsWith(".fvol"))) {
      const res = runConsumer(["validate", path.join(volumesDir, f)]);
      expect(res.status, `${f}: ${res.stderr}`).toBe(0);
    }
  }, 120_000);

  it("learn then parse on exported features completes", () => {
    // one part box per sample, centered on the bright disc each one carries
    const annotations = [0, 1, 2].map((i) => {
      const cx = 224 * (0.35 + 0.15 * (i % 3));
      const cy = 224 * (0.4 + 0.1 * ((i + 1) % 3));
      return {
        image: `sample-${i}`,
        part: "disc",
        template: i,
        bbox: [cx - 40, cy - 40, cx + 40, cy + 40],
      };
    });
    const annPath = path.join(work, "annotations.json");
    fs.writeFileSync(annPath, JSON.stringify(annotations));
    const config = {
      nk: [1, 1, 1],
      epsilon: 2,
      seed: 0,
      weights: {
        loc_in_units: true,
        lambda_pair: 0.0,
        lambda_close: 0.005,
        valid_layers: [11, 12, 13],
      },
    };
    const cfgPath = path.join(work, "config.json");
    fs.writeFileSync(cfgPath, JSON.stringify(config));
    const aogPath = path.join(work, "aog.json");
    const learn = runConsumer([
      "learn", "--features", volumesDir, "--annotations", annPath,
      "--config", cfgPath, "--out", aogPath,
    ]);
    expect(learn.status, learn.stderr).toBe(0);

    const parseOut = path.join(work, "parse.json");
    const parse = runConsumer([
      "parse", "--aog", aogPath,
      "--features", path.join(volumesDir, "sample-0.fvol"),
      "--out", parseOut,
    ]);
    expect(parse.status, parse.stderr).toBe(0);
    const doc = JSON.parse(fs.readFileSync(parseOut, "utf-8"));
    expect(doc).toHaveProperty("center");
    expect(doc).toHaveProperty("patterns");
  }, 300_000);
});
