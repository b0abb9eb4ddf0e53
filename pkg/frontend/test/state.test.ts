import { describe, expect, it } from "vitest";

import type { QueryResponse, Trace } from "../src/api.js";
import { AppState, initialState, reduce } from "../src/state.js";

const RESPONSE: QueryResponse = {
  answer: "ok",
  alternatives: [],
  route: "direct_answer",
  accepted: true,
  flags: [],
  hops_used: 0,
  trace_id: "t1",
  elapsed_ms: 1,
};

function answered(): AppState {
  return reduce(reduce(initialState, { kind: "submit" }), {
    kind: "answer",
    query: "hello",
    response: RESPONSE,
  });
}

describe("reducer", () => {
  it("appends a turn on success and clears pending", () => {
    const state = answered();
    expect(state.turns).toHaveLength(1);
    expect(state.turns[0]!.query).toBe("hello");
    expect(state.pending).toBe(false);
    expect(state.banner).toBeNull();
  });

  it("a failure sets the banner and leaves the conversation untouched", () => {
    const before = answered();
    const after = reduce(reduce(before, { kind: "submit" }), {
      kind: "failure",
      message: "server is unreachable",
    });
    expect(after.banner).toBe("server is unreachable");
    expect(after.turns).toEqual(before.turns); // no turn appended
    expect(after.pending).toBe(false);
  });

  it("the next successful answer clears the banner", () => {
    const failed = reduce(initialState, { kind: "failure", message: "boom" });
    const recovered = reduce(failed, { kind: "answer", query: "q", response: RESPONSE });
    expect(recovered.banner).toBeNull();
    expect(recovered.turns).toHaveLength(1);
  });

  it("trace loads attach to the matching turn and open it", () => {
    const trace: Trace = {
      trace_id: "t1",
      steps: [{ seq: 1, agent: "engine", event: "finalized", detail: {} }],
    };
    const state = reduce(answered(), { kind: "trace_loaded", traceId: "t1", trace });
    expect(state.turns[0]!.trace).toEqual(trace);
    expect(state.turns[0]!.traceOpen).toBe(true);
    const toggled = reduce(state, { kind: "trace_toggled", traceId: "t1" });
    expect(toggled.turns[0]!.traceOpen).toBe(false);
    expect(toggled.turns[0]!.trace).toEqual(trace); // kept for reopening
  });
});
