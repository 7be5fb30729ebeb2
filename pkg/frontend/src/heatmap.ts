// Posterior-surface heatmaps. Cell values come straight from the /posterior
// payload; this module lays them out and colors them, it never recomputes
// statistics. Each cell carries its exact value in data-value so displayed
// numbers round-trip the API.

import { boundarySegment, type RegionView } from "./region.js";
import type { GridCell, PosteriorPayload } from "./types.js";

export type SurfaceField =
  | "mu_f"
  | "sd_f"
  | "mu_g"
  | "sd_g"
  | "safety_probability"
  | "cei";

export const FIELD_LABELS: Record<SurfaceField, string> = {
  mu_f: "posterior mean (efficacy)",
  sd_f: "posterior sd (efficacy)",
  mu_g: "posterior mean (toxicity)",
  sd_g: "posterior sd (toxicity)",
  safety_probability: "safety probability",
  cei: "constrained EI",
};

export interface HeatmapCell {
  dose: number[];
  value: number; // verbatim payload value
  col: number;
  row: number;
}

export interface HeatmapModel {
  field: SurfaceField;
  xs: number[]; // sorted unique first coordinates
  ys: number[]; // sorted unique second coordinates
  cells: HeatmapCell[]; // payload order
  min: number;
  max: number;
  prior: boolean;
}

function uniqueSorted(values: number[]): number[] {
  return [...new Set(values)].sort((a, b) => a - b);
}

/** Lay out one surface of the posterior grid; values are copied, not derived. */
export function heatmapModel(payload: PosteriorPayload, field: SurfaceField): HeatmapModel {
  const xs = uniqueSorted(payload.grid.map((c) => c.dose[0]));
  const ys = uniqueSorted(payload.grid.map((c) => c.dose[1] ?? 0));
  const cells = payload.grid.map((c: GridCell) => ({
    dose: c.dose,
    value: c[field],
    col: xs.indexOf(c.dose[0]),
    row: ys.indexOf(c.dose[1] ?? 0),
  }));
  const values = cells.map((c) => c.value).filter((v) => Number.isFinite(v));
  return {
    field,
    xs,
    ys,
    cells,
    min: values.length ? Math.min(...values) : 0,
    max: values.length ? Math.max(...values) : 0,
    prior: payload.prior,
  };
}

// Light yellow to deep red, like the figures people expect for dose grids.
const LOW: [number, number, number] = [255, 250, 205];
const HIGH: [number, number, number] = [179, 18, 23];

export function cellColor(value: number, min: number, max: number): string {
  if (!Number.isFinite(value)) return "rgb(220, 220, 220)";
  const t = max > min ? (value - min) / (max - min) : 0.5;
  const mix = LOW.map((lo, i) => Math.round(lo + t * (HIGH[i] - lo)));
  return `rgb(${mix[0]}, ${mix[1]}, ${mix[2]})`;
}

/** Compact display form; the exact value stays in data-value. */
export function formatValue(value: number): string {
  if (!Number.isFinite(value)) return String(value);
  const abs = Math.abs(value);
  if (abs !== 0 && (abs >= 1e4 || abs < 1e-3)) return value.toExponential(2);
  return value.toPrecision(3);
}

const SVG_NS = "http://www.w3.org/2000/svg";

function sameDose(a: number[], b: number[] | null | undefined): boolean {
  return !!b && a.length === b.length && a.every((v, i) => v === b[i]);
}

/**
 * Overlay in dose coordinates: the region boundary w'd = rate*q plus markers
 * for evaluated doses and the pending assignment. viewBox is the unit square
 * so line endpoints read directly as doses (y flipped for display only).
 */
export function regionOverlay(payload: PosteriorPayload): SVGSVGElement {
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("class", "region-overlay");
  svg.setAttribute("viewBox", "0 0 1 1");
  svg.setAttribute("preserveAspectRatio", "none");
  const flip = document.createElementNS(SVG_NS, "g");
  flip.setAttribute("transform", "translate(0,1) scale(1,-1)");
  svg.appendChild(flip);

  const region: RegionView = {
    iteration: payload.region.iteration,
    rate: payload.region.rate,
  };
  const segment = boundarySegment(region);
  if (segment) {
    const [[x1, y1], [x2, y2]] = segment;
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("class", "region-boundary");
    line.setAttribute("x1", String(x1));
    line.setAttribute("y1", String(y1));
    line.setAttribute("x2", String(x2));
    line.setAttribute("y2", String(y2));
    flip.appendChild(line);
  }
  for (const dose of payload.region.evaluated) {
    const dot = document.createElementNS(SVG_NS, "circle");
    dot.setAttribute("class", "evaluated-dose");
    dot.setAttribute("cx", String(dose[0]));
    dot.setAttribute("cy", String(dose[1] ?? 0));
    dot.setAttribute("r", "0.02");
    flip.appendChild(dot);
  }
  if (payload.pending_dose) {
    const pending = document.createElementNS(SVG_NS, "circle");
    pending.setAttribute("class", "pending-dose");
    pending.setAttribute("cx", String(payload.pending_dose[0]));
    pending.setAttribute("cy", String(payload.pending_dose[1] ?? 0));
    pending.setAttribute("r", "0.03");
    flip.appendChild(pending);
  }
  return svg;
}

/**
 * Render one surface into `container` (cleared first): a cell table with the
 * region overlay stacked on top. Pre-data payloads get the `prior` class so
 * the stylesheet can wash them out.
 */
export function renderHeatmap(
  container: HTMLElement,
  payload: PosteriorPayload,
  field: SurfaceField,
): HeatmapModel {
  const model = heatmapModel(payload, field);
  container.textContent = "";
  container.classList.add("heatmap");
  container.classList.toggle("prior", model.prior);

  const caption = document.createElement("div");
  caption.className = "heatmap-title";
  caption.textContent = FIELD_LABELS[field] + (model.prior ? " (prior)" : "");
  container.appendChild(caption);

  const frame = document.createElement("div");
  frame.className = "heatmap-frame";
  const table = document.createElement("table");
  table.className = "heatmap-grid";
  const byPos = new Map(model.cells.map((c) => [`${c.col},${c.row}`, c]));
  for (let r = model.ys.length - 1; r >= 0; r--) {
    const tr = document.createElement("tr");
    for (let c = 0; c < model.xs.length; c++) {
      const td = document.createElement("td");
      const cell = byPos.get(`${c},${r}`);
      if (cell) {
        td.dataset.dose = JSON.stringify(cell.dose);
        td.dataset.value = String(cell.value);
        td.title = `d=(${cell.dose.join(", ")}) ${field}=${cell.value}`;
        td.textContent = formatValue(cell.value);
        td.style.backgroundColor = cellColor(cell.value, model.min, model.max);
        if (sameDose(cell.dose, payload.pending_dose)) td.classList.add("pending");
        if (payload.region.evaluated.some((d) => sameDose(cell.dose, d))) {
          td.classList.add("evaluated");
        }
      }
      tr.appendChild(td);
    }
    table.appendChild(tr);
  }
  frame.appendChild(table);
  frame.appendChild(regionOverlay(payload));
  container.appendChild(frame);
  return model;
}
