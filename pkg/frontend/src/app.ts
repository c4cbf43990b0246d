/** Browser studio: wires DOM controls to the session state and the client.
 *
 * All inference happens server-side; this file only renders rasters onto
 * canvases and translates pointer/slider input into state mutations.
 */

import { ServerClient } from "./client.js";
import { diversityGrid } from "./grid.js";
import { PaintLayer, UNTOUCHED } from "./paint.js";
import {
  SessionState,
  buildEditRequest,
  buildGenerateRequest,
} from "./state.js";
import { RasterPayload, SampleEntry } from "./types.js";
import { base64ToBytes } from "./base64.js";

const SCALE = 4; // 64px rasters drawn at 256px

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function drawRaster(canvas: HTMLCanvasElement, raster: RasterPayload): void {
  const bytes = base64ToBytes(raster.data);
  const { width: w, height: h, channels } = raster;
  const image = new ImageData(w, h);
  const plane = w * h;
  for (let i = 0; i < plane; i++) {
    if (channels === 3) {
      image.data[i * 4] = bytes[i]!;
      image.data[i * 4 + 1] = bytes[plane + i]!;
      image.data[i * 4 + 2] = bytes[2 * plane + i]!;
    } else {
      const v = bytes[i]! * 40; // label map -> visible grays
      image.data[i * 4] = v;
      image.data[i * 4 + 1] = v;
      image.data[i * 4 + 2] = v;
    }
    image.data[i * 4 + 3] = 255;
  }
  canvas.width = w * SCALE;
  canvas.height = h * SCALE;
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  const tmp = document.createElement("canvas");
  tmp.width = w;
  tmp.height = h;
  tmp.getContext("2d")!.putImageData(image, 0, 0);
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function drawOverlay(canvas: HTMLCanvasElement, layer: PaintLayer): void {
  const ctx = canvas.getContext("2d")!;
  ctx.fillStyle = "rgba(255, 64, 64, 0.45)";
  for (let y = 0; y < layer.height; y++) {
    for (let x = 0; x < layer.width; x++) {
      const v = layer.data[y * layer.width + x]!;
      if (v !== 0 && v !== UNTOUCHED) {
        ctx.fillRect(x * SCALE, y * SCALE, SCALE, SCALE);
      }
    }
  }
}

type Tool = "seg-edit" | "rgb-mask" | "seg-mask";

async function main(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("server") ?? "http://127.0.0.1:8787";
  const client = new ServerClient(base);

  const status = el<HTMLDivElement>("status");
  status.textContent = `connecting to ${base}…`;
  const info = await client.info();
  status.textContent =
    `model: latent ${info.latent_shape.join("x")}, ` +
    `${info.image_size}px, ${info.train_steps_done} train steps`;

  const state = new SessionState(info);

  // --- attribute sliders --------------------------------------------------
  const attrPanel = el<HTMLDivElement>("attrs");
  for (const control of state.attributes) {
    const row = document.createElement("div");
    row.className = "attr-row";
    const toggle = document.createElement("input");
    toggle.type = "checkbox";
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = "1";
    slider.step = "0.01";
    slider.value = String(control.value);
    const label = document.createElement("span");
    label.textContent = `${control.name}: ${control.value.toFixed(2)}`;
    const sync = () => {
      control.value = Number(slider.value);
      control.specified = toggle.checked;
      label.textContent = `${control.name}: ${control.value.toFixed(2)}`;
    };
    toggle.addEventListener("input", sync);
    slider.addEventListener("input", () => {
      toggle.checked = true;
      sync();
    });
    row.append(toggle, slider, label);
    attrPanel.append(row);
  }

  // --- guidance controls ----------------------------------------------------
  const bindNumber = (id: string, apply: (v: number) => void) => {
    const input = el<HTMLInputElement>(id);
    input.addEventListener("input", () => apply(Number(input.value)));
  };
  bindNumber("omega-v", (v) => (state.omegaV = v));
  bindNumber("omega-a", (v) => (state.omegaA = v));
  bindNumber("eta", (v) => (state.eta = v));
  bindNumber("steps", (v) => (state.steps = Math.round(v)));
  bindNumber("t-rec", (v) => (state.tRecFraction = v / 100));
  el<HTMLInputElement>("seed").addEventListener("input", (ev) => {
    const raw = (ev.target as HTMLInputElement).value.trim();
    state.seed = raw === "" ? null : Number(raw);
  });

  // --- canvases and painting ----------------------------------------------
  const mainCanvas = el<HTMLCanvasElement>("main-canvas");
  const segCanvas = el<HTMLCanvasElement>("seg-canvas");
  let tool: Tool = "rgb-mask";
  el<HTMLSelectElement>("tool").addEventListener("input", (ev) => {
    tool = (ev.target as HTMLSelectElement).value as Tool;
  });
  const brushInput = el<HTMLInputElement>("brush");
  const classInput = el<HTMLInputElement>("seg-class");

  const layerFor = (t: Tool): PaintLayer =>
    t === "seg-edit"
      ? state.segEdit
      : t === "rgb-mask"
        ? state.rgbMask
        : state.segMask;

  const redraw = () => {
    if (state.reference !== null) {
      drawRaster(mainCanvas, state.reference.image);
      drawRaster(segCanvas, state.reference.seg);
      drawOverlay(tool === "seg-edit" ? segCanvas : mainCanvas, layerFor(tool));
    }
  };

  let painting = false;
  let strokePoints: Array<{ x: number; y: number }> = [];
  const target = () => (tool === "seg-edit" ? segCanvas : mainCanvas);
  const toPixel = (ev: MouseEvent, canvas: HTMLCanvasElement) => {
    const rect = canvas.getBoundingClientRect();
    return {
      x: ((ev.clientX - rect.left) / rect.width) * info.image_size,
      y: ((ev.clientY - rect.top) / rect.height) * info.image_size,
    };
  };
  for (const canvas of [mainCanvas, segCanvas]) {
    canvas.addEventListener("mousedown", (ev) => {
      if (canvas !== target() || state.reference === null) return;
      painting = true;
      strokePoints = [toPixel(ev, canvas)];
    });
    canvas.addEventListener("mousemove", (ev) => {
      if (!painting || canvas !== target()) return;
      strokePoints.push(toPixel(ev, canvas));
    });
  }
  window.addEventListener("mouseup", () => {
    if (!painting) return;
    painting = false;
    const value =
      tool === "seg-edit" ? Number(classInput.value) : 1;
    layerFor(tool).applyStroke({
      points: strokePoints,
      radius: Number(brushInput.value),
      value,
    });
    strokePoints = [];
    redraw();
  });
  el<HTMLButtonElement>("undo").addEventListener("click", () => {
    layerFor(tool).undo();
    redraw();
  });

  // --- actions --------------------------------------------------------------
  const results = el<HTMLDivElement>("results");
  const showSamples = (samples: SampleEntry[]) => {
    results.textContent = "";
    for (const sample of samples) {
      const cell = document.createElement("div");
      cell.className = "tile";
      const canvas = document.createElement("canvas");
      drawRaster(canvas, sample.image);
      const caption = document.createElement("div");
      caption.textContent =
        `seed ${sample.seed} | ` +
        Object.entries(sample.measured_attrs)
          .filter(([, v]) => v > 0.5)
          .map(([k]) => k)
          .join(", ");
      const adopt = document.createElement("button");
      adopt.textContent = "edit this";
      adopt.addEventListener("click", () => {
        state.adoptReference(sample);
        redraw();
      });
      cell.append(canvas, caption, adopt);
      results.append(cell);
    }
  };

  const run = async (fn: () => Promise<SampleEntry[]>) => {
    status.textContent = "sampling…";
    try {
      showSamples(await fn());
      status.textContent = `done (${state.history.length} requests so far)`;
    } catch (err) {
      status.textContent = `error: ${(err as Error).message}`;
    }
  };

  el<HTMLButtonElement>("generate").addEventListener("click", () =>
    run(async () => {
      const request = buildGenerateRequest(state);
      const response = await client.generate(request);
      state.record({ endpoint: "generate", request, response });
      return response.samples;
    }),
  );
  el<HTMLButtonElement>("edit").addEventListener("click", () =>
    run(async () => {
      const request = buildEditRequest(state);
      const response = await client.edit(request);
      state.record({ endpoint: "edit", request, response });
      return response.samples;
    }),
  );
  el<HTMLButtonElement>("grid").addEventListener("click", () =>
    run(async () => {
      const { tiles } = await diversityGrid(client, state, {
        count: Math.min(9, info.max_count),
      });
      return tiles.map((t) => t.sample);
    }),
  );
  el<HTMLButtonElement>("replay").addEventListener("click", () =>
    run(async () => {
      const last = state.history[state.history.length - 1];
      if (last === undefined) throw new Error("nothing to replay");
      // Re-dispatch the echoed request: the seed is pinned, so this is exact.
      const request = { ...last.request, seed: last.response.request.seed };
      const response =
        last.endpoint === "edit"
          ? await client.edit(request as never)
          : await client.generate(request);
      state.record({ endpoint: last.endpoint, request, response });
      return response.samples;
    }),
  );
}

main().catch((err) => {
  document.body.textContent = `failed to start: ${err}`;
});
