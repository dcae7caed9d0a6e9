import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { INSTRUMENTATION_GLOBAL, install } from "../src/instrumentation.js";
import { snapshotWindow } from "./helpers.js";

describe("global installation", () => {
  let restore: () => void;

  beforeEach(() => {
    restore = snapshotWindow();
  });

  afterEach(() => {
    restore();
  });

  it("exposes the driving surface under window.__webeval exactly once", () => {
    // The names here are the wire contract: the harness evaluates
    // window.__webeval.freeze() and friends over the DevTools protocol.
    expect(INSTRUMENTATION_GLOBAL).toBe("__webeval");

    const api = install(window as Window & typeof globalThis);
    const carrier = window as unknown as Record<string, unknown>;
    expect(carrier[INSTRUMENTATION_GLOBAL]).toBe(api);
    expect(typeof api.freeze).toBe("function");
    expect(typeof api.unfreeze).toBe("function");
    expect(typeof api.census).toBe("function");
    expect(typeof api.collectConsoleErrors).toBe("function");
    expect(api.census()).toEqual({ intervals: 0, timeouts: 0, animation_frames: 0 });

    // A second install is a no-op returning the same instance.
    expect(install(window as Window & typeof globalThis)).toBe(api);
  });
});
