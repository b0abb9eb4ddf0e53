// Conversation state as a pure reducer: the round-trip behavior the UI
// promises (a failed request never appends a turn) lives here, not in
// event-handler spaghetti.

import type { QueryResponse, Trace } from "./api.js";

export interface Turn {
  query: string;
  response: QueryResponse;
  trace: Trace | null; // filled in when the user expands the trace
  traceOpen: boolean;
}

export interface AppState {
  turns: Turn[];
  banner: string | null; // non-null = error banner is showing
  pending: boolean;
}

export const initialState: AppState = { turns: [], banner: null, pending: false };

export type AppEvent =
  | { kind: "submit" }
  | { kind: "answer"; query: string; response: QueryResponse }
  | { kind: "failure"; message: string }
  | { kind: "trace_loaded"; traceId: string; trace: Trace }
  | { kind: "trace_toggled"; traceId: string };

export function reduce(state: AppState, event: AppEvent): AppState {
  switch (event.kind) {
    case "submit":
      return { ...state, pending: true, banner: null };
    case "answer":
      return {
        ...state,
        pending: false,
        banner: null,
        turns: [
          ...state.turns,
          { query: event.query, response: event.response, trace: null, traceOpen: false },
        ],
      };
    case "failure":
      // the conversation is left exactly as it was
      return { ...state, pending: false, banner: event.message };
    case "trace_loaded":
      return {
        ...state,
        turns: state.turns.map((t) =>
          t.response.trace_id === event.traceId ? { ...t, trace: event.trace, traceOpen: true } : t,
        ),
      };
    case "trace_toggled":
      return {
        ...state,
        turns: state.turns.map((t) =>
          t.response.trace_id === event.traceId ? { ...t, traceOpen: !t.traceOpen } : t,
        ),
      };
  }
}
