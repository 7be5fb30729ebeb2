// Single-page conduct console. All state lives server-side; the page keeps
// only the trial id (in the URL hash) and re-renders everything from the API,
// so a reload reconstructs the full view.

import { ApiError, ConductClient } from "./api.js";
import { buildObservationForm } from "./forms.js";
import { renderHeatmap, type SurfaceField } from "./heatmap.js";
import type {
  StratumRecommendation,
  StratumSummary,
  TrialEvent,
  TrialStatus,
} from "./types.js";

const SURFACES: SurfaceField[] = ["mu_f", "safety_probability", "cei"];
const DEFAULT_POLL_MS = 4000;

const DEFAULT_CONFIG = `{
  "grid_spacing": 0.25,
  "max_patients": 40,
  "strata": [[0.0], [1.0]],
  "toxicity_threshold": 0.5,
  "replication": 2,
  "rate": 0.25
}`;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function doseText(dose: number[] | null): string {
  return dose ? `(${dose.join(", ")})` : "none";
}

export interface AppOptions {
  pollMs?: number;
}

export class ConductApp {
  private readonly client: ConductClient;
  private readonly root: HTMLElement;
  private readonly pollMs: number;
  private trialId: string | null = null;
  private lastSequence = -1;
  private timer: ReturnType<typeof setInterval> | null = null;
  private trialPane: HTMLElement;
  private eventList: HTMLElement;
  private banner: HTMLElement;

  constructor(root: HTMLElement, client: ConductClient, options: AppOptions = {}) {
    this.root = root;
    this.client = client;
    this.pollMs = options.pollMs ?? DEFAULT_POLL_MS;
    this.banner = el("div", "banner");
    this.trialPane = el("div", "trial-pane");
    this.eventList = el("ul", "event-list");
    this.buildChrome();
  }

  private buildChrome(): void {
    this.root.textContent = "";
    this.root.appendChild(this.banner);

    const createForm = el("form", "create-trial");
    const configInput = el("textarea");
    configInput.name = "config";
    configInput.rows = 8;
    configInput.value = DEFAULT_CONFIG;
    const openInput = el("input");
    openInput.name = "trial-id";
    openInput.placeholder = "existing trial id";
    const createButton = el("button", "", "create trial");
    createButton.type = "submit";
    const openButton = el("button", "", "open");
    openButton.type = "button";
    openButton.addEventListener("click", () => {
      if (openInput.value.trim()) void this.openTrial(openInput.value.trim());
    });
    createForm.append(configInput, createButton, openInput, openButton);
    createForm.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.createTrial(configInput.value);
    });
    this.root.appendChild(createForm);

    this.root.appendChild(this.trialPane);
    const timeline = el("section", "timeline");
    timeline.appendChild(el("h2", "", "events"));
    timeline.appendChild(this.eventList);
    this.root.appendChild(timeline);

    const fromHash = window.location.hash.replace(/^#/, "");
    if (fromHash) void this.openTrial(fromHash);
  }

  private async createTrial(configText: string): Promise<void> {
    let config: object;
    try {
      config = JSON.parse(configText) as object;
    } catch (err) {
      this.showError(`config is not valid JSON: ${String(err)}`);
      return;
    }
    try {
      const status = await this.client.createTrial(config);
      await this.openTrial(status.trial_id);
    } catch (err) {
      this.showError(err instanceof ApiError ? err.detail : String(err));
    }
  }

  async openTrial(trialId: string): Promise<void> {
    this.trialId = trialId;
    this.lastSequence = -1;
    this.eventList.textContent = "";
    window.location.hash = trialId;
    if (this.timer) clearInterval(this.timer);
    this.timer = setInterval(() => void this.poll(), this.pollMs);
    await this.refresh();
  }

  private showError(message: string): void {
    this.banner.textContent = message;
    this.banner.classList.add("error");
  }

  /** Pull new events; on any activity re-render the whole trial pane. */
  private async poll(): Promise<void> {
    if (!this.trialId) return;
    try {
      const page = await this.client.events(this.trialId, this.lastSequence);
      if (page.log_error) this.showError(`log: ${page.log_error}`);
      if (page.events.length === 0) return;
      this.appendEvents(page.events);
      await this.refresh();
    } catch {
      // transient poll failures are retried on the next tick
    }
  }

  private appendEvents(events: TrialEvent[]): void {
    for (const ev of events) {
      this.lastSequence = Math.max(this.lastSequence, ev.sequence);
      const item = el("li", `event event-${ev.kind}`);
      item.textContent = `#${ev.sequence} ${ev.kind}`;
      this.eventList.appendChild(item);
    }
  }

  async refresh(): Promise<void> {
    if (!this.trialId) return;
    let status: TrialStatus;
    try {
      status = await this.client.getTrial(this.trialId);
    } catch (err) {
      this.showError(err instanceof ApiError ? err.detail : String(err));
      return;
    }
    this.banner.classList.remove("error");
    this.banner.textContent =
      `trial ${status.trial_id}: ${status.total_patients ?? "?"} patients, ` +
      `${status.complete ? "complete" : "running"}` +
      (status.read_only ? ` [read-only: ${status.diagnostic}]` : "");

    this.trialPane.textContent = "";
    for (const stratum of status.strata) {
      this.trialPane.appendChild(this.stratumPanel(status, stratum));
    }
    if (status.complete) await this.renderRecommendation();
  }

  private stratumPanel(status: TrialStatus, stratum: StratumSummary): HTMLElement {
    const panel = el("section", `stratum-panel status-${stratum.status}`);
    const head = el("header");
    head.appendChild(el("h2", "", `stratum ${stratum.index} [${stratum.covariates.join(", ")}]`));
    head.appendChild(el("span", `badge ${stratum.status}`, stratum.status));
    panel.appendChild(head);

    const facts = el("dl", "stratum-facts");
    const fact = (label: string, value: string) => {
      facts.appendChild(el("dt", "", label));
      facts.appendChild(el("dd", "", value));
    };
    fact("pending dose", doseText(stratum.pending_dose));
    fact("patients", `${stratum.patients_used} / ${stratum.allocation}`);
    fact("cohorts", String(stratum.cohorts));
    fact("futility counter", String(stratum.efficacy_counter));
    fact("toxicity counter", String(stratum.toxicity_counter));
    fact(
      "region",
      `iteration ${stratum.region_iteration}` +
        (stratum.region_fully_expanded ? " (fully expanded)" : ""),
    );
    panel.appendChild(facts);

    if (stratum.status === "active" && stratum.pending_dose) {
      const formHost = el("div", "form-host");
      panel.appendChild(formHost);
      buildObservationForm(
        formHost,
        stratum,
        (responses, key) =>
          this.client.submitObservations(this.trialId!, {
            stratum: stratum.index,
            dose: stratum.pending_dose!,
            responses,
            idempotency_key: key,
          }),
        () => void this.refresh(),
      );
    }

    const maps = el("div", "heatmap-row");
    panel.appendChild(maps);
    void this.client
      .posterior(this.trialId!, stratum.index)
      .then((payload) => {
        for (const field of SURFACES) {
          const host = el("div");
          maps.appendChild(host);
          renderHeatmap(host, payload, field);
        }
      })
      .catch(() => {
        maps.appendChild(el("div", "heatmap-error", "posterior unavailable"));
      });
    return panel;
  }

  private async renderRecommendation(): Promise<void> {
    if (!this.trialId) return;
    let payload;
    try {
      payload = await this.client.recommendation(this.trialId);
    } catch {
      return; // e.g. no stratum ever recorded data
    }
    const section = el("section", "recommendation");
    section.appendChild(
      el("h2", "", `final recommendation (${payload.samples} samples, seed ${payload.seed})`),
    );
    for (const rec of payload.recommendations) {
      section.appendChild(this.recommendationBlock(rec));
    }
    this.trialPane.appendChild(section);
  }

  private recommendationBlock(rec: StratumRecommendation): HTMLElement {
    const block = el("div", "recommendation-stratum");
    block.appendChild(
      el(
        "h3",
        "",
        `stratum ${rec.stratum}: point estimate ${doseText(rec.point_estimate)}, ` +
          `feasible ${rec.feasible_fraction}`,
      ),
    );
    const table = el("table", "distribution");
    const head = el("tr");
    head.appendChild(el("th", "", "dose"));
    head.appendChild(el("th", "", "frequency"));
    table.appendChild(head);
    for (const row of rec.distribution) {
      const tr = el("tr");
      tr.appendChild(el("td", "", doseText(row.dose)));
      const freq = el("td", "", String(row.frequency));
      freq.dataset.value = String(row.frequency);
      tr.appendChild(freq);
      table.appendChild(tr);
    }
    block.appendChild(table);
    return block;
  }

  stop(): void {
    if (this.timer) clearInterval(this.timer);
    this.timer = null;
  }
}

export function mountApp(root: HTMLElement, baseUrl: string, options?: AppOptions): ConductApp {
  return new ConductApp(root, new ConductClient(baseUrl), options);
}
