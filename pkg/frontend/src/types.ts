/** Wire schema of the facediff HTTP service.
 *
 * These types mirror the JSON the server produces and consumes; the studio
 * never performs inference itself, it only builds these payloads.
 */

/** Base64-encoded row-major u8 raster with explicit dimensions. */
export interface RasterPayload {
  data: string;
  width: number;
  height: number;
  channels: number;
}

/** GET /model/info response. */
export interface ModelInfo {
  latent_shape: [number, number];
  image_size: number;
  n_attr: number;
  attribute_names: string[];
  class_names: string[];
  palette: Record<string, number[]>;
  timesteps: number;
  max_steps: number;
  max_count: number;
  train_steps_done: number;
  ranges: {
    omega_v: [number, number];
    omega_a: [number, number];
    eta: [number, number];
    attrs: [number, number];
  };
}

/** Condition block shared by /generate and the /edit reference. */
export interface ConditionBlock {
  attrs?: Record<string, number>;
  rgb?: RasterPayload;
  seg?: RasterPayload;
  rgb_mask?: RasterPayload;
  seg_mask?: RasterPayload;
}

export interface GenerateRequest extends ConditionBlock {
  omega_v?: number;
  omega_a?: number;
  eta?: number;
  steps?: number;
  seed?: number;
  count?: number;
}

export interface EditRequest extends GenerateRequest {
  reference: ConditionBlock;
  t_rec: number;
}

export interface SampleEntry {
  latent: number[][];
  image: RasterPayload;
  seg: RasterPayload;
  measured_attrs: Record<string, number>;
  seed: number;
}

/** Echo of the resolved sampling parameters (server fills the seed). */
export interface RequestEcho {
  seed: number;
  count: number;
  steps: number;
  eta: number;
  omega_v: number;
  omega_a: number;
  t_rec?: number;
}

export interface GenerateResponse {
  samples: SampleEntry[];
  request: RequestEcho;
}

export interface RenderRequest {
  latent: number[][];
}

export interface HealthResponse {
  status: "ok" | "loading";
}
