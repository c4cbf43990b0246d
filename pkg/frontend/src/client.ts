/** Typed client for the facediff HTTP service.
 *
 * Every request is validated against the server's /model/info before
 * dispatch so malformed payloads fail locally with a clear message instead
 * of a 4xx round trip.
 */

import {
  ConditionBlock,
  EditRequest,
  GenerateRequest,
  GenerateResponse,
  HealthResponse,
  ModelInfo,
  RasterPayload,
  RenderRequest,
  SampleEntry,
} from "./types.js";

export class ClientError extends Error {}

/** HTTP-level failure carrying the server's status and error message. */
export class ServerError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

function checkRaster(
  raster: RasterPayload,
  channels: number,
  size: number,
  what: string,
): void {
  if (raster.channels !== channels) {
    throw new ClientError(`${what} must have ${channels} channel(s)`);
  }
  if (raster.width !== size || raster.height !== size) {
    throw new ClientError(`${what} must be ${size}x${size}`);
  }
  const padding = (raster.data.match(/=+$/) ?? [""])[0].length;
  const bytes = (raster.data.length / 4) * 3 - padding;
  const expected = channels * size * size;
  if (bytes !== expected) {
    throw new ClientError(
      `${what} data decodes to ${bytes} bytes, expected ${expected}`,
    );
  }
}

function checkConditions(
  block: ConditionBlock,
  info: ModelInfo,
  prefix = "",
): void {
  const size = info.image_size;
  if (block.attrs !== undefined) {
    const [lo, hi] = info.ranges.attrs;
    for (const [name, value] of Object.entries(block.attrs)) {
      if (!info.attribute_names.includes(name)) {
        throw new ClientError(`unknown attribute ${JSON.stringify(name)}`);
      }
      if (!Number.isFinite(value) || value < lo || value > hi) {
        throw new ClientError(`attribute ${name} must be in [${lo}, ${hi}]`);
      }
    }
  }
  if (block.rgb) checkRaster(block.rgb, 3, size, `${prefix}rgb`);
  if (block.seg) checkRaster(block.seg, 1, size, `${prefix}seg`);
  if (block.rgb_mask) checkRaster(block.rgb_mask, 1, size, `${prefix}rgb_mask`);
  if (block.seg_mask) checkRaster(block.seg_mask, 1, size, `${prefix}seg_mask`);
}

function checkSampling(req: GenerateRequest, info: ModelInfo): void {
  const inRange = (name: string, v: number | undefined, lo: number, hi: number) => {
    if (v === undefined) return;
    if (!Number.isFinite(v) || v < lo || v > hi) {
      throw new ClientError(`${name} must be in [${lo}, ${hi}]`);
    }
  };
  inRange("omega_v", req.omega_v, ...info.ranges.omega_v);
  inRange("omega_a", req.omega_a, ...info.ranges.omega_a);
  inRange("eta", req.eta, ...info.ranges.eta);
  if (req.steps !== undefined) {
    if (!Number.isInteger(req.steps) || req.steps < 1 || req.steps > info.max_steps) {
      throw new ClientError(`steps must be an integer in [1, ${info.max_steps}]`);
    }
  }
  if (req.count !== undefined) {
    if (!Number.isInteger(req.count) || req.count < 1 || req.count > info.max_count) {
      throw new ClientError(`count must be an integer in [1, ${info.max_count}]`);
    }
  }
  if (req.seed !== undefined && !Number.isInteger(req.seed)) {
    throw new ClientError("seed must be an integer");
  }
}

/** Validate a /generate payload against the model's dimensions and ranges. */
export function validateGenerate(req: GenerateRequest, info: ModelInfo): void {
  checkSampling(req, info);
  checkConditions(req, info);
}

/** Validate an /edit payload (generate payload + reference + t_rec). */
export function validateEdit(req: EditRequest, info: ModelInfo): void {
  validateGenerate(req, info);
  checkConditions(req.reference, info, "reference.");
  const steps = req.steps ?? 100;
  if (!Number.isInteger(req.t_rec) || req.t_rec < 0 || req.t_rec > steps) {
    throw new ClientError(`t_rec must be an integer in [0, ${steps}]`);
  }
}

export function validateRender(req: RenderRequest, info: ModelInfo): void {
  const [k, d] = info.latent_shape;
  if (!Array.isArray(req.latent) || req.latent.length !== k) {
    throw new ClientError(`latent must have ${k} rows`);
  }
  for (const row of req.latent) {
    if (!Array.isArray(row) || row.length !== d) {
      throw new ClientError(`latent rows must have ${d} entries`);
    }
    for (const v of row) {
      if (!Number.isFinite(v)) {
        throw new ClientError("latent contains non-finite values");
      }
    }
  }
}

type FetchLike = typeof fetch;

export class ServerClient {
  private cachedInfo: ModelInfo | null = null;

  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: body !== undefined ? { "Content-Type": "application/json" } : {},
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    const payload = (await response.json()) as Record<string, unknown>;
    if (!response.ok) {
      const message =
        typeof payload.error === "string" ? payload.error : response.statusText;
      throw new ServerError(response.status, message);
    }
    return payload as T;
  }

  async health(): Promise<HealthResponse> {
    const response = await this.fetchImpl(this.baseUrl + "/health");
    return (await response.json()) as HealthResponse;
  }

  /** Fetch and cache /model/info; all validation keys off this. */
  async info(force = false): Promise<ModelInfo> {
    if (this.cachedInfo === null || force) {
      this.cachedInfo = await this.request<ModelInfo>("GET", "/model/info");
    }
    return this.cachedInfo;
  }

  async generate(req: GenerateRequest): Promise<GenerateResponse> {
    validateGenerate(req, await this.info());
    return this.request<GenerateResponse>("POST", "/generate", req);
  }

  async edit(req: EditRequest): Promise<GenerateResponse> {
    validateEdit(req, await this.info());
    return this.request<GenerateResponse>("POST", "/edit", req);
  }

  async render(req: RenderRequest): Promise<SampleEntry> {
    validateRender(req, await this.info());
    return this.request<SampleEntry>("POST", "/render", req);
  }
}
