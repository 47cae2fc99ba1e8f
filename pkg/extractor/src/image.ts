/**
 * Minimal netpbm (P5/P6, maxval <= 255) reader.  Returns RGB float
 * planes in [0, 1]; grayscale inputs are replicated across channels.
 */

export interface RgbImage {
  width: number;
  height: number;
  /** interleaved RGB, length width*height*3, values in [0, 1] */
  data: Float32Array;
}

function parseHeader(buf: Buffer): { magic: string; fields: number[]; offset: number } {
  const magic = buf.subarray(0, 2).toString("ascii");
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < buf.length && /\s/.test(String.fromCharCode(buf[pos]))) pos++;
    if (buf[pos] === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++;
    fields.push(parseInt(buf.subarray(start, pos).toString("ascii"), 10));
  }
  pos++; // single whitespace after maxval
  return { magic, fields, offset: pos };
}

export function decodeNetpbm(buf: Buffer): RgbImage {
  const { magic, fields, offset } = parseHeader(buf);
  const [width, height, maxval] = fields;
  if (!Number.isFinite(width) || !Number.isFinite(height) || maxval > 255 || maxval <= 0) {
    throw new Error(`unsupported netpbm header (${magic}, maxval ${maxval})`);
  }
  const pixels = width * height;
  const data = new Float32Array(pixels * 3);
  if (magic === "P6") {
    if (buf.length < offset + pixels * 3) throw new Error("truncated P6 payload");
    for (let i = 0; i < pixels * 3; i++) data[i] = buf[offset + i] / maxval;
  } else if (magic === "P5") {
    if (buf.length < offset + pixels) throw new Error("truncated P5 payload");
    for (let i = 0; i < pixels; i++) {
      const v = buf[offset + i] / maxval;
      data[3 * i] = v;
      data[3 * i + 1] = v;
      data[3 * i + 2] = v;
    }
  } else {
    throw new Error(`unsupported image magic '${magic}' (expected P5 or P6)`);
  }
  return { width, height, data };
}

export function encodePpm(img: RgbImage): Buffer {
  const header = Buffer.from(`P6\n${img.width} ${img.height}\n255\n`, "ascii");
  const body = Buffer.alloc(img.width * img.height * 3);
  for (let i = 0; i < body.length; i++) {
    body[i] = Math.max(0, Math.min(255, Math.round(img.data[i] * 255)));
  }
  return Buffer.concat([header, body]);
}
