// Cohort observation entry. The form always shows exactly r_k response rows
// and refuses to submit until every field parses as a number, so the server
// never sees a short cohort from this UI. One idempotency key is minted per
// pending cohort (not per click): stray double submissions collapse into a
// single state change server-side, and the button is disabled while a
// request is in flight so normally only one request is sent at all.

import { ApiError } from "./api.js";
import type { StratumSummary, TrialStatus } from "./types.js";

export type SubmitObservations = (
  responses: Array<[number, number]>,
  idempotencyKey: string,
) => Promise<TrialStatus>;

export interface ObservationFormHandle {
  form: HTMLFormElement;
  idempotencyKey: string;
}

export function newIdempotencyKey(): string {
  const crypto = globalThis.crypto;
  const token =
    crypto && "randomUUID" in crypto
      ? crypto.randomUUID()
      : Math.random().toString(36).slice(2) + Date.now().toString(36);
  return `obs-${token}`;
}

function responseRow(index: number): HTMLTableRowElement {
  const tr = document.createElement("tr");
  const label = document.createElement("td");
  label.textContent = `patient ${index + 1}`;
  tr.appendChild(label);
  for (const name of [`yf-${index}`, `yg-${index}`]) {
    const td = document.createElement("td");
    const input = document.createElement("input");
    input.type = "number";
    input.step = "any";
    input.name = name;
    input.required = true;
    td.appendChild(input);
    tr.appendChild(td);
  }
  return tr;
}

/**
 * Read exactly `replication` (y_f, y_g) pairs from the form, or null if any
 * field is missing or not numeric. Offending inputs get the `invalid` class.
 */
export function collectResponses(
  form: HTMLFormElement,
  replication: number,
): Array<[number, number]> | null {
  const rows: Array<[number, number]> = [];
  let ok = true;
  for (let i = 0; i < replication; i++) {
    const pair: number[] = [];
    for (const name of [`yf-${i}`, `yg-${i}`]) {
      const input = form.elements.namedItem(name) as HTMLInputElement | null;
      const value = input ? Number(input.value) : NaN;
      const valid = input !== null && input.value.trim() !== "" && Number.isFinite(value);
      input?.classList.toggle("invalid", !valid);
      if (!valid) ok = false;
      pair.push(value);
    }
    rows.push([pair[0], pair[1]]);
  }
  return ok ? rows : null;
}

/**
 * Build the entry form for one stratum's pending cohort. `onSubmit` performs
 * the POST (the app passes a ConductClient call bound to the trial); the
 * handle exposes the cohort's idempotency key so retries reuse it.
 */
export function buildObservationForm(
  container: HTMLElement,
  stratum: StratumSummary,
  onSubmit: SubmitObservations,
  onAccepted?: (status: TrialStatus) => void,
): ObservationFormHandle {
  const idempotencyKey = newIdempotencyKey();
  const form = document.createElement("form");
  form.className = "observation-form";
  form.noValidate = true; // validation is ours so the error text is ours

  const heading = document.createElement("div");
  heading.className = "form-heading";
  heading.textContent =
    `stratum ${stratum.index}: ${stratum.replication} response pair(s) at ` +
    `dose (${(stratum.pending_dose ?? []).join(", ")})`;
  form.appendChild(heading);

  const table = document.createElement("table");
  const head = document.createElement("tr");
  for (const text of ["", "efficacy y_f", "toxicity y_g"]) {
    const th = document.createElement("th");
    th.textContent = text;
    head.appendChild(th);
  }
  table.appendChild(head);
  for (let i = 0; i < stratum.replication; i++) table.appendChild(responseRow(i));
  form.appendChild(table);

  const error = document.createElement("div");
  error.className = "form-error";
  form.appendChild(error);

  const button = document.createElement("button");
  button.type = "submit";
  button.textContent = "record cohort";
  form.appendChild(button);

  let inFlight = false;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    if (inFlight) return; // double click while the first request runs
    const responses = collectResponses(form, stratum.replication);
    if (responses === null) {
      error.textContent = `enter all ${stratum.replication} numeric response pair(s)`;
      return;
    }
    error.textContent = "";
    inFlight = true;
    button.disabled = true;
    void onSubmit(responses, idempotencyKey)
      .then((status) => {
        form.classList.add("accepted");
        onAccepted?.(status);
      })
      .catch((err: unknown) => {
        if (err instanceof ApiError && err.status === 409) {
          // already recorded (retry raced an earlier success); treat as settled
          error.textContent = err.detail;
          form.classList.add("accepted");
        } else if (err instanceof ApiError) {
          error.textContent = err.detail;
          button.disabled = false;
        } else {
          error.textContent = String(err);
          button.disabled = false;
        }
      })
      .finally(() => {
        inFlight = false;
      });
  });

  container.appendChild(form);
  return { form, idempotencyKey };
}
