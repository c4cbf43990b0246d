/** Client-side validation and HTTP plumbing against a mocked fetch. */

import { describe, expect, it, vi } from "vitest";
import {
  ClientError,
  ServerClient,
  ServerError,
  validateEdit,
  validateGenerate,
  validateRender,
} from "../src/client.js";
import { makeInfo, makeRaster } from "./fixtures.js";

const info = makeInfo();

describe("validateGenerate", () => {
  it("accepts a well-formed request", () => {
    expect(() =>
      validateGenerate(
        {
          attrs: { glasses: 1.0 },
          rgb: makeRaster(3, info.image_size),
          rgb_mask: makeRaster(1, info.image_size),
          omega_v: 3,
          omega_a: 1.5,
          eta: 0.25,
          steps: 50,
          seed: 7,
          count: 4,
        },
        info,
      ),
    ).not.toThrow();
  });

  it("rejects unknown and out-of-range attributes", () => {
    expect(() => validateGenerate({ attrs: { mustache: 1 } }, info)).toThrow(
      ClientError,
    );
    expect(() => validateGenerate({ attrs: { glasses: 1.5 } }, info)).toThrow(
      /\[0, 1\]/,
    );
  });

  it("rejects wrong raster dimensions and channel counts", () => {
    expect(() =>
      validateGenerate({ rgb: makeRaster(3, info.image_size + 1) }, info),
    ).toThrow(/16x16/);
    expect(() =>
      validateGenerate({ rgb: makeRaster(1, info.image_size) }, info),
    ).toThrow(/3 channel/);
    const truncated = { ...makeRaster(1, info.image_size), data: "AAAA" };
    expect(() => validateGenerate({ seg: truncated }, info)).toThrow(/bytes/);
  });

  it("rejects sampling parameters outside the advertised ranges", () => {
    expect(() => validateGenerate({ eta: 1.5 }, info)).toThrow(ClientError);
    expect(() => validateGenerate({ omega_v: -1 }, info)).toThrow(ClientError);
    expect(() => validateGenerate({ steps: info.max_steps + 1 }, info)).toThrow(
      /steps/,
    );
    expect(() => validateGenerate({ steps: 0 }, info)).toThrow(/steps/);
    expect(() => validateGenerate({ count: info.max_count + 1 }, info)).toThrow(
      /count/,
    );
    expect(() => validateGenerate({ seed: 1.5 }, info)).toThrow(/seed/);
  });
});

describe("validateEdit", () => {
  const base = { reference: { rgb: makeRaster(3, info.image_size) } };

  it("bounds t_rec by the requested steps", () => {
    expect(() => validateEdit({ ...base, steps: 50, t_rec: 25 }, info)).not.toThrow();
    expect(() => validateEdit({ ...base, steps: 50, t_rec: 51 }, info)).toThrow(
      /t_rec/,
    );
    expect(() => validateEdit({ ...base, steps: 50, t_rec: -1 }, info)).toThrow(
      /t_rec/,
    );
    expect(() =>
      validateEdit({ ...base, steps: 50, t_rec: 12.5 }, info),
    ).toThrow(/t_rec/);
  });

  it("validates the reference block's rasters", () => {
    expect(() =>
      validateEdit(
        { reference: { rgb: makeRaster(3, 8) }, steps: 50, t_rec: 10 },
        info,
      ),
    ).toThrow(/reference\.rgb/);
  });
});

describe("validateRender", () => {
  it("checks the latent's shape and finiteness", () => {
    const [k, d] = info.latent_shape;
    const good = Array.from({ length: k }, () => new Array<number>(d).fill(0));
    expect(() => validateRender({ latent: good }, info)).not.toThrow();
    expect(() => validateRender({ latent: good.slice(1) }, info)).toThrow(/rows/);
    const bad = good.map((row) => [...row]);
    bad[0]![0] = Number.NaN;
    expect(() => validateRender({ latent: bad }, info)).toThrow(/finite/);
  });
});

function mockFetch(routes: Record<string, { status: number; body: unknown }>) {
  return vi.fn(async (url: string | URL | Request) => {
    const path = new URL(String(url)).pathname;
    const route = routes[path];
    if (route === undefined) throw new Error(`unmocked path ${path}`);
    return {
      ok: route.status < 400,
      status: route.status,
      statusText: "",
      json: async () => route.body,
    } as Response;
  }) as unknown as typeof fetch;
}

describe("ServerClient", () => {
  it("caches /model/info and validates before dispatch", async () => {
    const fetchImpl = mockFetch({
      "/model/info": { status: 200, body: info },
      "/generate": { status: 200, body: { samples: [], request: {} } },
    });
    const client = new ServerClient("http://example.test", fetchImpl);
    await client.generate({ steps: 10 });
    await client.generate({ steps: 20 });
    const calls = (fetchImpl as unknown as ReturnType<typeof vi.fn>).mock.calls;
    const infoCalls = calls.filter((c) => String(c[0]).endsWith("/model/info"));
    expect(infoCalls.length).toBe(1);
    // Invalid request fails locally: no /generate call is added.
    await expect(client.generate({ steps: 0 })).rejects.toThrow(ClientError);
    const genCalls = calls.filter((c) => String(c[0]).endsWith("/generate"));
    expect(genCalls.length).toBe(2);
  });

  it("surfaces server errors with their status", async () => {
    const fetchImpl = mockFetch({
      "/model/info": { status: 200, body: info },
      "/generate": { status: 422, body: { error: "steps exceeds the budget" } },
    });
    const client = new ServerClient("http://example.test", fetchImpl);
    const failure = client.generate({ steps: 10 });
    await expect(failure).rejects.toThrow(ServerError);
    await expect(failure).rejects.toMatchObject({ status: 422 });
  });

  it("reports health without requiring a loaded model", async () => {
    const fetchImpl = mockFetch({
      "/health": { status: 503, body: { status: "loading" } },
    });
    const client = new ServerClient("http://example.test", fetchImpl);
    expect((await client.health()).status).toBe("loading");
  });
});
