/** Diversity grid: many samples under one fixed condition set.
 *
 * The grid issues a single request with count > 1 so the server batches the
 * work; eta defaults to 0.25 (mild stochasticity) so tiles differ even at a
 * fixed seed base, unless the caller pins eta explicitly.
 */

import { ServerClient } from "./client.js";
import { SessionState, buildGenerateRequest } from "./state.js";
import { GenerateRequest, GenerateResponse, SampleEntry } from "./types.js";

export const GRID_DEFAULT_ETA = 0.25;

export interface GridOptions {
  count: number;
  /** Overrides the grid default; omit to use GRID_DEFAULT_ETA. */
  eta?: number;
  seed?: number;
}

export interface GridTile {
  sample: SampleEntry;
  /** Ground-truth attribute readout shown under each tile. */
  measured: Record<string, number>;
  seed: number;
}

export function buildGridRequest(
  state: SessionState,
  options: GridOptions,
): GenerateRequest {
  if (!Number.isInteger(options.count) || options.count < 1) {
    throw new Error("grid count must be a positive integer");
  }
  if (options.count > state.info.max_count) {
    throw new Error(`grid count exceeds server limit (${state.info.max_count})`);
  }
  const req = buildGenerateRequest(state);
  req.count = options.count;
  req.eta = options.eta ?? GRID_DEFAULT_ETA;
  if (options.seed !== undefined) req.seed = options.seed;
  return req;
}

export async function diversityGrid(
  client: ServerClient,
  state: SessionState,
  options: GridOptions,
): Promise<{ tiles: GridTile[]; response: GenerateResponse }> {
  const request = buildGridRequest(state, options);
  const response = await client.generate(request);
  state.record({ endpoint: "generate", request, response });
  const tiles = response.samples.map((sample) => ({
    sample,
    measured: sample.measured_attrs,
    seed: sample.seed,
  }));
  return { tiles, response };
}
