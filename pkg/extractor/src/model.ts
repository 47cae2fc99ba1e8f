/**
 * A VGG-16-shaped conv stack in tfjs that exposes post-ReLU activations
 * of selected conv layers.
 *
 * Weights come either from a JSON file (for anyone holding converted
 * pretrained weights) or from a seeded deterministic generator.  Random
 * weights keep every geometric property of the export intact; they are a
 * documented stand-in where pretrained weights cannot be fetched.
 */

import * as tf from "@tensorflow/tfjs";
import * as fs from "fs";

import { LayerGeometry, convLayerNames, geometryTable } from "./geometry";
import { RgbImage } from "./image";

export interface ConvWeights {
  kernels: Float32Array[]; // [kh, kw, inCh, outCh] flattened, one per conv
  biases: Float32Array[];
}

/** Deterministic 32-bit PRNG (mulberry32). */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function gaussianPair(rand: () => number): [number, number] {
  let u = 0;
  let v = 0;
  while (u === 0) u = rand();
  v = rand();
  const r = Math.sqrt(-2 * Math.log(u));
  return [r * Math.cos(2 * Math.PI * v), r * Math.sin(2 * Math.PI * v)];
}

export function randomWeights(channels: number[], seed: number): ConvWeights {
  const rand = mulberry32(seed);
  const kernels: Float32Array[] = [];
  const biases: Float32Array[] = [];
  let inCh = 3;
  for (const outCh of channels) {
    const n = 3 * 3 * inCh * outCh;
    const std = Math.sqrt(2 / (3 * 3 * inCh));
    const k = new Float32Array(n);
    for (let i = 0; i < n; i += 2) {
      const [a, b] = gaussianPair(rand);
      k[i] = a * std;
      if (i + 1 < n) k[i + 1] = b * std;
    }
    kernels.push(k);
    biases.push(new Float32Array(outCh));
    inCh = outCh;
  }
  return { kernels, biases };
}

export function loadWeightsFile(path: string, channels: number[]): ConvWeights {
  const doc = JSON.parse(fs.readFileSync(path, "utf-8"));
  const names = convLayerNames();
  const kernels: Float32Array[] = [];
  const biases: Float32Array[] = [];
  let inCh = 3;
  names.forEach((name, i) => {
    const entry = doc[name];
    if (!entry) throw new Error(`weights file lacks layer '${name}'`);
    const outCh = channels[i];
    const kernel = Float32Array.from(entry.kernel as number[]);
    if (kernel.length !== 3 * 3 * inCh * outCh) {
      throw new Error(
        `layer '${name}': kernel has ${kernel.length} values, ` +
          `expected ${3 * 3 * inCh * outCh}`,
      );
    }
    const bias = Float32Array.from((entry.bias ?? new Array(outCh).fill(0)) as number[]);
    kernels.push(kernel);
    biases.push(bias);
    inCh = outCh;
  });
  return { kernels, biases };
}

const POOL_AFTER = new Set([2, 4, 7, 10]); // conv indices followed by a pool

export interface ExtractedLayer {
  geometry: LayerGeometry;
  /** (channel, row, column) activations */
  data: Float32Array;
}

/**
 * Run the stack on one image resized to the square input size; returns
 * post-ReLU activations of the selected conv layers.
 */
export function extract(
  img: RgbImage,
  inputSize: number,
  channels: number[],
  weights: ConvWeights,
  selection: LayerGeometry[],
): ExtractedLayer[] {
  const table = geometryTable(inputSize, channels);
  const byIndex = new Map(table.map((l) => [l.convIndex, l]));
  const wanted = new Set(selection.map((l) => l.convIndex));

  const grabbed: ExtractedLayer[] = [];
  let x = tf.tidy(
    () =>
      tf
        .tensor3d(img.data, [img.height, img.width, 3])
        .resizeBilinear([inputSize, inputSize])
        .sub(0.5)
        .expandDims(0) as tf.Tensor4D,
  );
  let inCh = 3;
  channels.forEach((outCh, i) => {
    const convIndex = i + 1;
    const prev = x;
    x = tf.tidy(() => {
      const kernel = tf.tensor4d(weights.kernels[i], [3, 3, inCh, outCh]);
      const bias = tf.tensor1d(weights.biases[i]);
      return tf.relu(tf.add(tf.conv2d(prev, kernel, 1, "same"), bias)) as tf.Tensor4D;
    });
    prev.dispose();
    if (wanted.has(convIndex)) {
      const geom = byIndex.get(convIndex)!;
      const chw = tf.tidy(() => x.squeeze([0]).transpose([2, 0, 1]));
      grabbed.push({ geometry: geom, data: chw.dataSync() as Float32Array });
      chw.dispose();
    }
    if (POOL_AFTER.has(convIndex)) {
      const pooled = tf.maxPool(x, 2, 2, "valid") as tf.Tensor4D;
      x.dispose();
      x = pooled;
    }
    inCh = outCh;
  });
  x.dispose();
  return grabbed;
}
