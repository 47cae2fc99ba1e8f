/**
 * Receptive-field arithmetic for the 13-conv VGG-16 stack.
 *
 * Every conv is 3x3 stride 1 pad 1 (geometry-preserving), every pool is
 * 2x2 stride 2 pad 0.  Walking the stack with the standard recurrences
 *   jump'   = jump * stride
 *   rf'     = rf + (kernel - 1) * jump
 *   offset' = offset + ((kernel - 1) / 2 - pad) * jump
 * yields the affine unit-to-pixel map each exported layer carries.
 * Pixel (0,0) is taken to have its center at image coordinate 0.
 */

export interface LayerGeometry {
  name: string;
  convIndex: number; // 1-based position among the 13 conv layers
  channels: number;
  height: number;
  width: number;
  stridePx: number;
  rfSizePx: number;
  offsetPx: number;
}

type Op =
  | { kind: "conv"; name: string; convIndex: number; outChannels: number }
  | { kind: "pool" };

export const NARROW_CHANNELS = [16, 16, 32, 32, 64, 64, 64, 64, 64, 64, 64, 64, 64];
export const VGG16_CHANNELS = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512];

const BLOCKS = [2, 2, 3, 3, 3]; // convs per block, pool after each of the first four

export function convLayerNames(): string[] {
  const names: string[] = [];
  BLOCKS.forEach((count, b) => {
    for (let i = 1; i <= count; i++) names.push(`conv${b + 1}_${i}`);
  });
  return names;
}

function stackOps(channels: number[]): Op[] {
  const names = convLayerNames();
  const ops: Op[] = [];
  let convIndex = 0;
  BLOCKS.forEach((count, b) => {
    for (let i = 0; i < count; i++) {
      ops.push({
        kind: "conv",
        name: names[convIndex],
        convIndex: convIndex + 1,
        outChannels: channels[convIndex],
      });
      convIndex += 1;
    }
    if (b < BLOCKS.length - 1) ops.push({ kind: "pool" });
  });
  return ops;
}

/** Geometry of every conv layer for a square input of the given size. */
export function geometryTable(inputSize: number, channels: number[]): LayerGeometry[] {
  const out: LayerGeometry[] = [];
  let jump = 1;
  let rf = 1;
  let offset = 0;
  let size = inputSize;
  for (const op of stackOps(channels)) {
    if (op.kind === "conv") {
      rf += 2 * jump; // (k-1)*jump with k=3; pad 1 keeps offset and size
      out.push({
        name: op.name,
        convIndex: op.convIndex,
        channels: op.outChannels,
        height: size,
        width: size,
        stridePx: jump,
        rfSizePx: rf,
        offsetPx: offset,
      });
    } else {
      offset += 0.5 * jump; // ((k-1)/2 - pad)*jump with k=2, pad 0
      rf += jump;
      jump *= 2;
      size = Math.floor(size / 2);
    }
  }
  return out;
}

/** Parse a --layers argument: "5-13", "5,8,13", or comma-separated names. */
export function resolveLayerSelection(arg: string, table: LayerGeometry[]): LayerGeometry[] {
  const byName = new Map(table.map((l) => [l.name, l]));
  const byIndex = new Map(table.map((l) => [l.convIndex, l]));
  const picked: LayerGeometry[] = [];
  for (const piece of arg.split(",").map((s) => s.trim()).filter(Boolean)) {
    const range = piece.match(/^(\d+)-(\d+)$/);
    if (range) {
      const lo = parseInt(range[1], 10);
      const hi = parseInt(range[2], 10);
      for (let i = lo; i <= hi; i++) {
        const layer = byIndex.get(i);
        if (!layer) throw new Error(`unknown conv layer index ${i}`);
        picked.push(layer);
      }
    } else if (/^\d+$/.test(piece)) {
      const layer = byIndex.get(parseInt(piece, 10));
      if (!layer) throw new Error(`unknown conv layer index ${piece}`);
      picked.push(layer);
    } else {
      const layer = byName.get(piece);
      if (!layer) throw new Error(`unknown conv layer name '${piece}'`);
      picked.push(layer);
    }
  }
  if (picked.length === 0) throw new Error("empty layer selection");
  return picked.sort((a, b) => a.convIndex - b.convIndex);
}

/** The default export set: the last nine conv layers. */
export const DEFAULT_LAYERS = "5-13";
