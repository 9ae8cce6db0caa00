/** Minimal PNG writer plus a pixel painter mirroring the SVG shapes. */

import * as zlib from "zlib";

const FONT: Record<string, number[]> = {
  // 5x7 bitmap glyphs, one number per row (5 bits)
  "0": [14, 17, 19, 21, 25, 17, 14], "1": [4, 12, 4, 4, 4, 4, 14],
  "2": [14, 17, 1, 2, 4, 8, 31], "3": [14, 17, 1, 6, 1, 17, 14],
  "4": [2, 6, 10, 18, 31, 2, 2], "5": [31, 16, 30, 1, 1, 17, 14],
  "6": [6, 8, 16, 30, 17, 17, 14], "7": [31, 1, 2, 4, 8, 8, 8],
  "8": [14, 17, 17, 14, 17, 17, 14], "9": [14, 17, 17, 15, 1, 2, 12],
  ".": [0, 0, 0, 0, 0, 12, 12], "-": [0, 0, 0, 14, 0, 0, 0],
  "+": [0, 4, 4, 31, 4, 4, 0], "e": [0, 0, 14, 17, 31, 16, 14],
  "=": [0, 0, 31, 0, 31, 0, 0], " ": [0, 0, 0, 0, 0, 0, 0],
  "s": [0, 0, 15, 16, 14, 1, 30], "l": [12, 4, 4, 4, 4, 4, 14],
  "o": [0, 0, 14, 17, 17, 17, 14], "p": [0, 0, 30, 17, 30, 16, 16],
  "t": [8, 8, 30, 8, 8, 9, 6], "i": [4, 0, 12, 4, 4, 4, 14],
  "d": [1, 1, 15, 17, 17, 17, 15], "c": [0, 0, 14, 17, 16, 17, 14],
  "f": [6, 9, 8, 30, 8, 8, 8], "h": [16, 16, 30, 17, 17, 17, 17],
  "r": [0, 0, 22, 25, 16, 16, 16], "a": [0, 0, 14, 1, 15, 17, 15],
  "n": [0, 0, 30, 17, 17, 17, 17], "g": [0, 15, 17, 17, 15, 1, 14],
  "v": [0, 0, 17, 17, 17, 10, 4], "u": [0, 0, 17, 17, 17, 19, 13],
  "m": [0, 0, 26, 21, 21, 21, 21], "x": [0, 0, 17, 10, 4, 10, 17],
  "L": [16, 16, 16, 16, 16, 16, 31], "S": [15, 16, 16, 14, 1, 1, 30],
  "C": [14, 17, 16, 16, 16, 17, 14], "d_": [1, 1, 15, 17, 17, 17, 15],
};

function colorOf(name: string): [number, number, number] {
  const named: Record<string, string> = {
    white: "#ffffff", black: "#000000",
  };
  let hex = named[name] ?? name;
  if (!hex.startsWith("#")) hex = "#888888";
  const v = parseInt(hex.slice(1), 16);
  return [(v >> 16) & 255, (v >> 8) & 255, v & 255];
}

export class Raster {
  data: Uint8Array;

  constructor(public width: number, public height: number) {
    this.data = new Uint8Array(width * height * 3).fill(255);
  }

  set(x: number, y: number, rgb: [number, number, number],
      alpha = 1.0): void {
    const xi = Math.round(x);
    const yi = Math.round(y);
    if (xi < 0 || yi < 0 || xi >= this.width || yi >= this.height) return;
    const k = (yi * this.width + xi) * 3;
    for (let c = 0; c < 3; c++) {
      this.data[k + c] = Math.round(
        (1 - alpha) * this.data[k + c] + alpha * rgb[c]);
    }
  }

  line(pts: [number, number][], stroke: string, width = 1.6): void {
    const rgb = colorOf(stroke);
    const r = Math.max(0, Math.round(width / 2) - 1);
    for (let s = 0; s + 1 < pts.length; s++) {
      const [x0, y0] = pts[s];
      const [x1, y1] = pts[s + 1];
      const n = Math.max(2, Math.ceil(Math.hypot(x1 - x0, y1 - y0)) * 2);
      for (let k = 0; k <= n; k++) {
        const x = x0 + ((x1 - x0) * k) / n;
        const y = y0 + ((y1 - y0) * k) / n;
        for (let dx = -r; dx <= r; dx++) {
          for (let dy = -r; dy <= r; dy++) this.set(x + dx, y + dy, rgb);
        }
      }
    }
  }

  rect(x: number, y: number, w: number, h: number, fill: string,
       opacity = 1.0): void {
    const rgb = colorOf(fill);
    for (let yi = Math.round(y); yi < y + h; yi++) {
      for (let xi = Math.round(x); xi < x + w; xi++) {
        this.set(xi, yi, rgb, opacity);
      }
    }
  }

  circle(x: number, y: number, r: number, fill: string): void {
    const rgb = colorOf(fill);
    for (let dx = -r; dx <= r; dx++) {
      for (let dy = -r; dy <= r; dy++) {
        if (dx * dx + dy * dy <= r * r) this.set(x + dx, y + dy, rgb);
      }
    }
  }

  text(x: number, y: number, content: string, size = 13,
       anchor = "start", color = "#222222"): void {
    const rgb = colorOf(color);
    const scale = size >= 16 ? 2 : 1;
    const cw = 6 * scale;
    let px = anchor === "middle" ? x - (content.length * cw) / 2
      : anchor === "end" ? x - content.length * cw : x;
    const py = y - 7 * scale;
    for (const ch of content) {
      const glyph = FONT[ch] ?? FONT[ch.toLowerCase()] ?? FONT[" "];
      for (let row = 0; row < 7; row++) {
        for (let col = 0; col < 5; col++) {
          if ((glyph[row] >> (4 - col)) & 1) {
            for (let sx = 0; sx < scale; sx++) {
              for (let sy = 0; sy < scale; sy++) {
                this.set(px + col * scale + sx, py + row * scale + sy,
                         rgb);
              }
            }
          }
        }
      }
      px += cw;
    }
  }

  encode(): Buffer {
    const w = this.width;
    const h = this.height;
    const raw = Buffer.alloc((w * 3 + 1) * h);
    for (let y = 0; y < h; y++) {
      raw[y * (w * 3 + 1)] = 0;
      Buffer.from(this.data.subarray(y * w * 3, (y + 1) * w * 3))
        .copy(raw, y * (w * 3 + 1) + 1);
    }
    const idat = zlib.deflateSync(raw, { level: 6 });
    const chunks = [
      Buffer.from("\x89PNG\r\n\x1a\n", "binary"),
      pngChunk("IHDR", ihdr(w, h)),
      pngChunk("IDAT", idat),
      pngChunk("IEND", Buffer.alloc(0)),
    ];
    return Buffer.concat(chunks);
  }
}

function ihdr(w: number, h: number): Buffer {
  const b = Buffer.alloc(13);
  b.writeUInt32BE(w, 0);
  b.writeUInt32BE(h, 4);
  b[8] = 8;     // bit depth
  b[9] = 2;     // truecolor
  return b;
}

function pngChunk(type: string, data: Buffer): Buffer {
  const len = Buffer.alloc(4);
  len.writeUInt32BE(data.length, 0);
  const body = Buffer.concat([Buffer.from(type, "binary"), data]);
  const crc = Buffer.alloc(4);
  crc.writeUInt32BE(crc32(body), 0);
  return Buffer.concat([len, body, crc]);
}

let CRC_TABLE: Uint32Array | null = null;

function crc32(buf: Buffer): number {
  if (!CRC_TABLE) {
    CRC_TABLE = new Uint32Array(256);
    for (let n = 0; n < 256; n++) {
      let c = n;
      for (let k = 0; k < 8; k++) {
        c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
      }
      CRC_TABLE[n] = c >>> 0;
    }
  }
  let c = 0xffffffff;
  for (const byte of buf) c = CRC_TABLE[(c ^ byte) & 255] ^ (c >>> 8);
  return (c ^ 0xffffffff) >>> 0;
}
