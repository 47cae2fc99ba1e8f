/**
 * FVOL1 binary writer.
 *
 * Layout (little-endian): magic "FVOL1\0"; u32 layer count, image width,
 * image height; u32 image-id byte length + UTF-8 id; then per layer
 * u32 layer_id, channels, height, width; f32 stride, rf size, offset; and
 * channels*height*width f32 activations in (slice, row, column) order.
 */

import { LayerGeometry } from "./geometry";

export interface VolumeLayer {
  geometry: LayerGeometry;
  /** activations in (channel, row, column) order */
  data: Float32Array;
}

export function encodeVolume(
  imageId: string,
  imageWidth: number,
  imageHeight: number,
  layers: VolumeLayer[],
): Buffer {
  const idBytes = Buffer.from(imageId, "utf-8");
  let total = 6 + 12 + 4 + idBytes.length;
  for (const layer of layers) {
    const g = layer.geometry;
    const count = g.channels * g.height * g.width;
    if (layer.data.length !== count) {
      throw new Error(
        `layer ${g.convIndex}: payload has ${layer.data.length} values, ` +
          `geometry implies ${count}`,
      );
    }
    total += 28 + 4 * count;
  }
  const buf = Buffer.alloc(total);
  let off = 0;
  off += buf.write("FVOL1\0", off, "binary");
  off = buf.writeUInt32LE(layers.length, off);
  off = buf.writeUInt32LE(imageWidth, off);
  off = buf.writeUInt32LE(imageHeight, off);
  off = buf.writeUInt32LE(idBytes.length, off);
  off += idBytes.copy(buf, off);
  for (const layer of layers) {
    const g = layer.geometry;
    off = buf.writeUInt32LE(g.convIndex, off);
    off = buf.writeUInt32LE(g.channels, off);
    off = buf.writeUInt32LE(g.height, off);
    off = buf.writeUInt32LE(g.width, off);
    off = buf.writeFloatLE(g.stridePx, off);
    off = buf.writeFloatLE(g.rfSizePx, off);
    off = buf.writeFloatLE(g.offsetPx, off);
    for (let i = 0; i < layer.data.length; i++) {
      off = buf.writeFloatLE(layer.data[i], off);
    }
  }
  if (off !== total) throw new Error(`encoder wrote ${off} of ${total} bytes`);
  return buf;
}
