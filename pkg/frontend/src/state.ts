/** Studio session state and the lossless mapping from controls to requests.
 *
 * Every UI control lives here; `buildGenerateRequest` / `buildEditRequest`
 * are pure functions of this state, so a history entry (request echo plus
 * the controls that produced it) replays exactly.
 */

import {
  ConditionBlock,
  EditRequest,
  GenerateRequest,
  GenerateResponse,
  ModelInfo,
  SampleEntry,
} from "./types.js";
import {
  PaintLayer,
  UNTOUCHED,
  maskToValidityRaster,
  segEditToRaster,
} from "./paint.js";
import { base64ToBytes } from "./base64.js";

export interface AttributeControl {
  name: string;
  value: number;
  /** Only specified attributes enter the request; the rest stay free. */
  specified: boolean;
}

export interface HistoryEntry {
  endpoint: "generate" | "edit";
  request: GenerateRequest | EditRequest;
  response: GenerateResponse;
}

export class SessionState {
  readonly info: ModelInfo;
  attributes: AttributeControl[];

  omegaV = 1.5;
  omegaA = 1.5;
  eta = 0.0;
  steps = 50;
  /** Re-noising depth as a fraction of `steps`; the slider is 0..100%. */
  tRecFraction = 0.5;
  seed: number | null = null;
  count = 1;

  /** Painted layers over the reference image. */
  segEdit: PaintLayer;
  rgbMask: PaintLayer;
  segMask: PaintLayer;

  /** Sample being edited; its rasters become the reference conditions. */
  reference: SampleEntry | null = null;

  history: HistoryEntry[] = [];

  constructor(info: ModelInfo) {
    this.info = info;
    this.attributes = info.attribute_names.map((name) => ({
      name,
      value: 0.5,
      specified: false,
    }));
    const s = info.image_size;
    this.segEdit = new PaintLayer(s, s, UNTOUCHED);
    this.rgbMask = new PaintLayer(s, s, 0);
    this.segMask = new PaintLayer(s, s, 0);
  }

  setAttribute(name: string, value: number, specified = true): void {
    const control = this.attributes.find((a) => a.name === name);
    if (control === undefined) {
      throw new Error(`unknown attribute ${JSON.stringify(name)}`);
    }
    control.value = value;
    control.specified = specified;
  }

  /** Server-side step index the t_rec slider currently maps to. */
  get tRecSteps(): number {
    const t = Math.round(this.tRecFraction * this.steps);
    return Math.min(this.steps, Math.max(0, t));
  }

  specifiedAttrs(): Record<string, number> {
    const out: Record<string, number> = {};
    for (const a of this.attributes) {
      if (a.specified) out[a.name] = a.value;
    }
    return out;
  }

  adoptReference(sample: SampleEntry): void {
    this.reference = sample;
    const s = this.info.image_size;
    this.segEdit = new PaintLayer(s, s, UNTOUCHED);
    this.rgbMask = new PaintLayer(s, s, 0);
    this.segMask = new PaintLayer(s, s, 0);
  }

  record(entry: HistoryEntry): void {
    this.history.push(entry);
  }
}

function samplingFields(state: SessionState): GenerateRequest {
  const req: GenerateRequest = {
    omega_v: state.omegaV,
    omega_a: state.omegaA,
    eta: state.eta,
    steps: state.steps,
    count: state.count,
  };
  if (state.seed !== null) req.seed = state.seed;
  return req;
}

/** Pure generation: specified attribute sliders only, no rasters. */
export function buildGenerateRequest(state: SessionState): GenerateRequest {
  const req = samplingFields(state);
  const attrs = state.specifiedAttrs();
  if (Object.keys(attrs).length > 0) req.attrs = attrs;
  return req;
}

/** The adopted sample taken at face value: full-validity rasters, no attrs. */
export function referenceConditions(state: SessionState): ConditionBlock {
  if (state.reference === null) {
    throw new Error("no reference sample adopted");
  }
  return { rgb: state.reference.image, seg: state.reference.seg };
}

/** Edit conditions: reference rasters under the painted masks, painted
 * segmentation labels merged in, plus the specified attribute sliders. */
export function editConditions(state: SessionState): ConditionBlock {
  if (state.reference === null) {
    throw new Error("no reference sample adopted");
  }
  const block: ConditionBlock = { rgb: state.reference.image };
  const refSeg = base64ToBytes(state.reference.seg.data);
  block.seg = state.segEdit.isEmpty(UNTOUCHED)
    ? state.reference.seg
    : segEditToRaster(state.segEdit, refSeg);
  if (!state.rgbMask.isEmpty()) {
    block.rgb_mask = maskToValidityRaster(state.rgbMask);
  }
  if (!state.segMask.isEmpty()) {
    block.seg_mask = maskToValidityRaster(state.segMask);
  }
  const attrs = state.specifiedAttrs();
  if (Object.keys(attrs).length > 0) block.attrs = attrs;
  return block;
}

export function buildEditRequest(state: SessionState): EditRequest {
  const req = samplingFields(state);
  return {
    ...req,
    ...editConditions(state),
    reference: referenceConditions(state),
    t_rec: state.tRecSteps,
  };
}
