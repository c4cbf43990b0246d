import { ModelInfo, RasterPayload, SampleEntry } from "../src/types.js";
import { bytesToBase64 } from "../src/base64.js";

export const ATTRIBUTE_NAMES = [
  "blonde_hair",
  "dark_hair",
  "glasses",
  "pale_skin",
  "long_hair",
  "big_eyes",
  "wide_face",
  "hat",
];

export function makeInfo(imageSize = 16): ModelInfo {
  return {
    latent_shape: [8, 32],
    image_size: imageSize,
    n_attr: 8,
    attribute_names: ATTRIBUTE_NAMES,
    class_names: ["background", "skin", "hair", "eyes", "mouth", "clothing"],
    palette: {},
    timesteps: 1000,
    max_steps: 200,
    max_count: 16,
    train_steps_done: 3000,
    ranges: {
      omega_v: [0, 50],
      omega_a: [0, 50],
      eta: [0, 1],
      attrs: [0, 1],
    },
  };
}

export function makeRaster(
  channels: number,
  size: number,
  fill = 0,
): RasterPayload {
  return {
    data: bytesToBase64(new Uint8Array(channels * size * size).fill(fill)),
    width: size,
    height: size,
    channels,
  };
}

export function makeSample(info: ModelInfo, seed = 0): SampleEntry {
  const [k, d] = info.latent_shape;
  return {
    latent: Array.from({ length: k }, () => new Array<number>(d).fill(0.1)),
    image: makeRaster(3, info.image_size, 128),
    seg: makeRaster(1, info.image_size, 1),
    measured_attrs: Object.fromEntries(ATTRIBUTE_NAMES.map((n) => [n, 0.5])),
    seed,
  };
}

/** Small deterministic PRNG for property tests. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}
