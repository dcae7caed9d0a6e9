/** Shared setup for instrumentation tests.
 *
 * The wrappers mutate window in place, so every test snapshots the touched
 * properties first and puts them back afterwards; fake timers must already
 * be active when the snapshot is taken so the instrumentation binds to
 * them rather than to the real scheduler.
 */

const TOUCHED = [
  "setInterval",
  "clearInterval",
  "setTimeout",
  "clearTimeout",
  "requestAnimationFrame",
  "cancelAnimationFrame",
] as const;

export function snapshotWindow(): () => void {
  const target = window as unknown as Record<string, unknown>;
  const saved: Record<string, unknown> = {};
  for (const name of TOUCHED) saved[name] = target[name];
  const savedConsoleError = console.error;
  return () => {
    for (const name of TOUCHED) target[name] = saved[name];
    console.error = savedConsoleError;
  };
}

export interface VideoStub {
  element: HTMLVideoElement;
  readonly playCalls: number;
  readonly pauseCalls: number;
}

export function stubVideo(initiallyPaused: boolean): VideoStub {
  const element = document.createElement("video");
  const state = { paused: initiallyPaused, playCalls: 0, pauseCalls: 0 };
  Object.defineProperty(element, "paused", {
    get: () => state.paused,
    configurable: true,
  });
  element.play = () => {
    state.playCalls += 1;
    state.paused = false;
    return Promise.resolve();
  };
  element.pause = () => {
    state.pauseCalls += 1;
    state.paused = true;
  };
  return {
    element,
    get playCalls() {
      return state.playCalls;
    },
    get pauseCalls() {
      return state.pauseCalls;
    },
  };
}
