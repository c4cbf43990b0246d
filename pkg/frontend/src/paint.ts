/** Paint layers for the studio canvases.
 *
 * Three layers share this representation:
 *   - "seg-edit":  painted segmentation class labels (0..n_classes-1) over a
 *     reference map; 255 marks "untouched, fall back to the reference".
 *   - "rgb-mask" / "seg-mask": binary masks; painted pixels are *masked out*
 *     of the condition (the server receives a validity raster, the inverse).
 *
 * Undo stores full bitmap snapshots. At 64x64 a snapshot is 4 KiB, so
 * exactness wins over a diff encoding.
 */

import { RasterPayload } from "./types.js";
import { bytesToBase64 } from "./base64.js";

export const UNTOUCHED = 255;

export interface Stroke {
  /** Pixel-space centers the brush passes through. */
  points: Array<{ x: number; y: number }>;
  /** Brush radius in pixels (circular, inclusive). */
  radius: number;
  /** Value written into the layer (class label, or 1 for masks). */
  value: number;
}

export class PaintLayer {
  readonly width: number;
  readonly height: number;
  data: Uint8Array;
  private undoStack: Uint8Array[] = [];

  constructor(width: number, height: number, fill: number = 0) {
    this.width = width;
    this.height = height;
    this.data = new Uint8Array(width * height).fill(fill);
  }

  /** Apply a brush stroke; returns true if any pixel changed.
   *
   * A snapshot is pushed onto the undo stack only when pixels actually
   * change, so an empty or out-of-bounds stroke is a no-op for undo too.
   */
  applyStroke(stroke: Stroke): boolean {
    const before = this.data.slice();
    let changed = false;
    const r = Math.max(0, stroke.radius);
    const r2 = r * r;
    for (const p of stroke.points) {
      const cx = Math.round(p.x);
      const cy = Math.round(p.y);
      const x0 = Math.max(0, cx - Math.ceil(r));
      const x1 = Math.min(this.width - 1, cx + Math.ceil(r));
      const y0 = Math.max(0, cy - Math.ceil(r));
      const y1 = Math.min(this.height - 1, cy + Math.ceil(r));
      for (let y = y0; y <= y1; y++) {
        for (let x = x0; x <= x1; x++) {
          const dx = x - cx;
          const dy = y - cy;
          if (dx * dx + dy * dy > r2) continue;
          const idx = y * this.width + x;
          if (this.data[idx] !== stroke.value) {
            this.data[idx] = stroke.value;
            changed = true;
          }
        }
      }
    }
    if (changed) this.undoStack.push(before);
    return changed;
  }

  /** Restore the exact bitmap before the last effective stroke. */
  undo(): boolean {
    const prev = this.undoStack.pop();
    if (prev === undefined) return false;
    this.data = prev;
    return true;
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  clear(fill: number = 0): void {
    const before = this.data.slice();
    this.data.fill(fill);
    let changed = false;
    for (let i = 0; i < before.length; i++) {
      if (before[i] !== fill) {
        changed = true;
        break;
      }
    }
    if (changed) this.undoStack.push(before);
  }

  isEmpty(blank: number = 0): boolean {
    return this.data.every((v) => v === blank);
  }
}

/** Mask layer -> server validity raster (nonzero = condition applies).
 *
 * Painted pixels (value != 0) are the ones the user wants *ignored*, so the
 * wire raster is the inverse of the layer.
 */
export function maskToValidityRaster(layer: PaintLayer): RasterPayload {
  const out = new Uint8Array(layer.data.length);
  for (let i = 0; i < out.length; i++) out[i] = layer.data[i]! === 0 ? 255 : 0;
  return {
    data: bytesToBase64(out),
    width: layer.width,
    height: layer.height,
    channels: 1,
  };
}

/** Seg-edit layer merged over a reference label map -> wire seg raster. */
export function segEditToRaster(
  layer: PaintLayer,
  reference: Uint8Array,
): RasterPayload {
  if (reference.length !== layer.data.length) {
    throw new Error(
      `reference has ${reference.length} pixels, layer has ` +
        `${layer.data.length}`,
    );
  }
  const out = new Uint8Array(layer.data.length);
  for (let i = 0; i < out.length; i++) {
    const painted = layer.data[i]!;
    out[i] = painted === UNTOUCHED ? reference[i]! : painted;
  }
  return {
    data: bytesToBase64(out),
    width: layer.width,
    height: layer.height,
    channels: 1,
  };
}
