// Browser bootstrap: wires the reducer and renderers to the real DOM.

import { ApiClient, ApiError } from "./api.js";
import { healthLine, renderApp } from "./render.js";
import { AppEvent, AppState, initialState, reduce } from "./state.js";

const DEFAULT_ORIGIN = { lat: 43.6817, lon: -79.3916 };

export function startApp(root: Document, baseUrl: string): void {
  const client = new ApiClient(baseUrl);
  const sessionId = crypto.randomUUID();
  let state: AppState = initialState;

  const main = root.getElementById("conversation")!;
  const form = root.getElementById("ask") as HTMLFormElement;
  const input = root.getElementById("query") as HTMLInputElement;
  const healthEl = root.getElementById("health")!;

  function dispatch(event: AppEvent): void {
    state = reduce(state, event);
    main.innerHTML = renderApp(state);
    main.querySelectorAll<HTMLButtonElement>(".trace-toggle").forEach((btn) => {
      btn.addEventListener("click", () => void toggleTrace(btn.dataset.traceId!));
    });
  }

  async function toggleTrace(traceId: string): Promise<void> {
    const turn = state.turns.find((t) => t.response.trace_id === traceId);
    if (!turn) return;
    if (turn.trace) {
      dispatch({ kind: "trace_toggled", traceId });
      return;
    }
    try {
      const trace = await client.trace(traceId);
      dispatch({ kind: "trace_loaded", traceId, trace });
    } catch (err) {
      dispatch({ kind: "failure", message: `could not load trace: ${String(err)}` });
    }
  }

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const query = input.value.trim();
    if (!query || state.pending) return;
    dispatch({ kind: "submit" });
    client
      .query({ query, origin: DEFAULT_ORIGIN, session_id: sessionId })
      .then((response) => {
        input.value = "";
        dispatch({ kind: "answer", query, response });
      })
      .catch((err: unknown) => {
        const message =
          err instanceof ApiError && err.status === null
            ? "server is unreachable — is `iotseek serve` running?"
            : String(err);
        dispatch({ kind: "failure", message });
      });
  });

  client
    .health()
    .then((h) => {
      healthEl.innerHTML = healthLine(h);
    })
    .catch(() => {
      healthEl.textContent = "server offline";
    });
}

declare global {
  interface Window {
    IOTSEEK_BASE_URL?: string;
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", () => {
    startApp(document, window.IOTSEEK_BASE_URL ?? "http://127.0.0.1:8000");
  });
}
