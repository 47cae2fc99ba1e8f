/**
 * Export conv activations of a VGG-16-shaped network into FVOL1 volumes.
 *
 * Usage:
 *   node dist/export.js --images DIR --out DIR [--layers 5-13]
 *        [--profile narrow|vgg16] [--weights random|FILE.json]
 *        [--seed 0] [--input-size 224]
 *
 * Every image (P5/P6 netpbm) becomes one .fvol file; a geometry.json
 * audit table is written alongside.  Logs go to stderr.
 */

import * as fs from "fs";
import * as path from "path";

import {
  DEFAULT_LAYERS,
  NARROW_CHANNELS,
  VGG16_CHANNELS,
  geometryTable,
  resolveLayerSelection,
} from "./geometry";
import { encodeVolume } from "./fvol";
import { decodeNetpbm } from "./image";
import { ConvWeights, extract, loadWeightsFile, randomWeights } from "./model";

interface Args {
  images: string;
  out: string;
  layers: string;
  profile: string;
  weights: string;
  seed: number;
  inputSize: number;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {
    images: "",
    out: "",
    layers: DEFAULT_LAYERS,
    profile: "narrow",
    weights: "random",
    seed: 0,
    inputSize: 224,
  };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const need = () => {
      if (i + 1 >= argv.length) throw new Error(`missing value for ${flag}`);
      return argv[++i];
    };
    switch (flag) {
      case "--images": args.images = need(); break;
      case "--out": args.out = need(); break;
      case "--layers": args.layers = need(); break;
      case "--profile": args.profile = need(); break;
      case "--weights": args.weights = need(); break;
      case "--seed": args.seed = parseInt(need(), 10); break;
      case "--input-size": args.inputSize = parseInt(need(), 10); break;
      default: throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!args.images || !args.out) {
    throw new Error("--images and --out are required");
  }
  return args;
}

export function runExport(args: Args): string[] {
  const channels =
    args.profile === "vgg16" ? VGG16_CHANNELS :
    args.profile === "narrow" ? NARROW_CHANNELS :
    (() => { throw new Error(`unknown profile '${args.profile}'`); })();

  const table = geometryTable(args.inputSize, channels);
  const selection = resolveLayerSelection(args.layers, table);

  let weights: ConvWeights;
  if (args.weights === "random") {
    console.error(
      `using seeded random weights (seed ${args.seed}); geometry and format ` +
        `are exact, activations are not from a pretrained network`,
    );
    weights = randomWeights(channels, args.seed);
  } else {
    weights = loadWeightsFile(args.weights, channels);
  }

  const files = fs
    .readdirSync(args.images)
    .filter((f) => f.endsWith(".ppm") || f.endsWith(".pgm"))
    .sort();
  if (files.length === 0) throw new Error(`no .ppm/.pgm images in ${args.images}`);
  fs.mkdirSync(args.out, { recursive: true });

  const written: string[] = [];
  for (const file of files) {
    const img = decodeNetpbm(fs.readFileSync(path.join(args.images, file)));
    const layers = extract(img, args.inputSize, channels, weights, selection);
    const imageId = path.basename(file).replace(/\.(ppm|pgm)$/, "");
    const buf = encodeVolume(
      imageId,
      args.inputSize,
      args.inputSize,
      layers.map((l) => ({ geometry: l.geometry, data: l.data })),
    );
    const outFile = path.join(args.out, `${imageId}.fvol`);
    fs.writeFileSync(outFile, buf);
    written.push(outFile);
    console.error(`exported ${file} -> ${outFile} (${layers.length} layers)`);
  }

  const audit = {
    model: `vgg16-conv-stack/${args.profile}`,
    weights: args.weights === "random" ? `random:${args.seed}` : args.weights,
    input_size: args.inputSize,
    layers: selection.map((l) => ({
      name: l.name,
      index: l.convIndex,
      channels: l.channels,
      height: l.height,
      width: l.width,
      stride: l.stridePx,
      rf: l.rfSizePx,
      offset: l.offsetPx,
    })),
  };
  const auditFile = path.join(args.out, "geometry.json");
  fs.writeFileSync(auditFile, JSON.stringify(audit, null, 1) + "\n");
  written.push(auditFile);
  return written;
}

if (require.main === module) {
  try {
    runExport(parseArgs(process.argv.slice(2)));
  } catch (err) {
    console.error(`export failed: ${(err as Error).message}`);
    process.exit(1);
  }
}
