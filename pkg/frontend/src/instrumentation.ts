/**
 * In-page instrumentation for evaluated web apps.
 *
 * The evaluation harness injects this bundle before any page script runs
 * and drives it over the DevTools protocol through four entry points on
 * `window.__webeval`:
 *
 *   freeze()                suspend timers, animation frames, CSS
 *                           animations, and media while the agent thinks
 *   unfreeze()              resume everything frozen
 *   census()                count live timer handles, for drift checks
 *   collectConsoleErrors()  filtered page errors for the evidence package
 *
 * Timer wrappers are installed once, at load. Handles returned to page
 * code are owned by this module, so a timer survives any number of
 * freeze/unfreeze cycles without the page noticing; an interval resumes
 * within one period of the unfreeze call.
 */

export const INSTRUMENTATION_GLOBAL = "__webeval";

// Fallback frame period when the environment has no requestAnimationFrame.
const FRAME_FALLBACK_MS = 16;

// Messages matching any of these never enter the error record: third-party
// font fetches, favicon probes, and warnings are noise on otherwise
// healthy pages. Mirrors the filter the harness applies on its side.
const NONCRITICAL_PATTERNS: RegExp[] = [
  /fonts\.googleapis\.com/i,
  /fonts\.gstatic\.com/i,
  /favicon[^\n]*404|404[^\n]*favicon/i,
  /^\s*\[?warn(ing)?\]?\b/i,
];

export interface TimerCensus {
  intervals: number;
  timeouts: number;
  animation_frames: number;
}

export interface Instrumentation {
  freeze(): boolean;
  unfreeze(): boolean;
  frozen(): boolean;
  census(): TimerCensus;
  collectConsoleErrors(): string[];
}

type TimerCallback = (...args: unknown[]) => void;

interface IntervalRecord {
  callback: TimerCallback;
  args: unknown[];
  delayMs: number;
  nativeId: number | null;
}

interface TimeoutRecord {
  callback: TimerCallback;
  args: unknown[];
  dueAt: number;
  remainingMs: number | null;
  nativeId: number | null;
}

interface FrameRecord {
  callback: FrameRequestCallback;
  nativeId: number | null;
  viaTimeout: boolean;
}

function describe(value: unknown): string {
  if (value instanceof Error) return `${value.name}: ${value.message}`;
  if (typeof value === "string") return value;
  try {
    return String(value);
  } catch {
    return "[unprintable value]";
  }
}

function isNoncritical(text: string): boolean {
  return NONCRITICAL_PATTERNS.some((pattern) => pattern.test(text));
}

function toCallback(handler: unknown): TimerCallback {
  if (typeof handler === "function") return handler as TimerCallback;
  // String handlers keep their HTML semantics; pages using them already
  // accept eval, so this adds no new capability.
  const code = String(handler);
  return () => (0, eval)(code);
}

export function createInstrumentation(win: Window & typeof globalThis): Instrumentation {
  const native = {
    setInterval: win.setInterval.bind(win),
    clearInterval: win.clearInterval.bind(win),
    setTimeout: win.setTimeout.bind(win),
    clearTimeout: win.clearTimeout.bind(win),
    requestAnimationFrame: win.requestAnimationFrame
      ? win.requestAnimationFrame.bind(win)
      : null,
    cancelAnimationFrame: win.cancelAnimationFrame
      ? win.cancelAnimationFrame.bind(win)
      : null,
    consoleError: win.console.error.bind(win.console),
  };
  const now = (): number => win.Date.now();

  const intervals = new Map<number, IntervalRecord>();
  const timeouts = new Map<number, TimeoutRecord>();
  const frames = new Map<number, FrameRecord>();
  let nextHandle = 1;
  let frozen = false;

  const errorRecords: string[] = [];
  const record = (text: string): void => {
    if (!isNoncritical(text)) errorRecords.push(text);
  };

  // --- timer wrappers -----------------------------------------------------

  const startInterval = (record: IntervalRecord): void => {
    record.nativeId = native.setInterval(() => {
      record.callback.apply(win, record.args);
    }, record.delayMs) as unknown as number;
  };

  const armTimeout = (handle: number, entry: TimeoutRecord, delayMs: number): void => {
    entry.nativeId = native.setTimeout(() => {
      timeouts.delete(handle);
      entry.callback.apply(win, entry.args);
    }, delayMs) as unknown as number;
  };

  const scheduleFrame = (handle: number, entry: FrameRecord): void => {
    const fire = (timestamp: number): void => {
      frames.delete(handle);
      entry.callback(timestamp);
    };
    if (native.requestAnimationFrame) {
      entry.viaTimeout = false;
      entry.nativeId = native.requestAnimationFrame(fire) as unknown as number;
    } else {
      entry.viaTimeout = true;
      entry.nativeId = native.setTimeout(() => fire(now()), FRAME_FALLBACK_MS) as unknown as number;
    }
  };

  win.setInterval = ((handler: unknown, timeout?: number, ...args: unknown[]): number => {
    const handle = nextHandle++;
    const entry: IntervalRecord = {
      callback: toCallback(handler),
      args,
      delayMs: timeout ?? 0,
      nativeId: null,
    };
    intervals.set(handle, entry);
    if (!frozen) startInterval(entry);
    return handle;
  }) as typeof win.setInterval;

  win.clearInterval = ((handle?: number): void => {
    if (handle === undefined) return;
    const entry = intervals.get(handle);
    if (entry) {
      intervals.delete(handle);
      if (entry.nativeId !== null) native.clearInterval(entry.nativeId);
      return;
    }
    native.clearInterval(handle);
  }) as typeof win.clearInterval;

  win.setTimeout = ((handler: unknown, timeout?: number, ...args: unknown[]): number => {
    const handle = nextHandle++;
    const delayMs = timeout ?? 0;
    const entry: TimeoutRecord = {
      callback: toCallback(handler),
      args,
      dueAt: now() + delayMs,
      remainingMs: frozen ? delayMs : null,
      nativeId: null,
    };
    timeouts.set(handle, entry);
    if (!frozen) armTimeout(handle, entry, delayMs);
    return handle;
  }) as typeof win.setTimeout;

  win.clearTimeout = ((handle?: number): void => {
    if (handle === undefined) return;
    const entry = timeouts.get(handle);
    if (entry) {
      timeouts.delete(handle);
      if (entry.nativeId !== null) native.clearTimeout(entry.nativeId);
      return;
    }
    native.clearTimeout(handle);
  }) as typeof win.clearTimeout;

  win.requestAnimationFrame = ((callback: FrameRequestCallback): number => {
    const handle = nextHandle++;
    const entry: FrameRecord = { callback, nativeId: null, viaTimeout: false };
    frames.set(handle, entry);
    if (!frozen) scheduleFrame(handle, entry);
    return handle;
  }) as typeof win.requestAnimationFrame;

  win.cancelAnimationFrame = ((handle?: number): void => {
    if (handle === undefined) return;
    const entry = frames.get(handle);
    if (entry) {
      frames.delete(handle);
      if (entry.nativeId !== null) {
        if (entry.viaTimeout) native.clearTimeout(entry.nativeId);
        else if (native.cancelAnimationFrame) native.cancelAnimationFrame(entry.nativeId);
      }
      return;
    }
    if (native.cancelAnimationFrame) native.cancelAnimationFrame(handle);
  }) as typeof win.cancelAnimationFrame;

  // --- CSS animations and media --------------------------------------------

  let freezeStyle: HTMLStyleElement | null = null;
  let pausedAnimations: Animation[] = [];
  let pausedMedia: HTMLMediaElement[] = [];

  const pauseAnimations = (): void => {
    const doc = win.document;
    if (!doc || freezeStyle) return;
    freezeStyle = doc.createElement("style");
    freezeStyle.setAttribute("data-webeval-freeze", "");
    freezeStyle.textContent =
      "*, *::before, *::after {" +
      " animation-play-state: paused !important;" +
      " transition: none !important; }";
    (doc.head || doc.documentElement).appendChild(freezeStyle);
    if (typeof doc.getAnimations === "function") {
      for (const animation of doc.getAnimations()) {
        if (animation.playState === "running") {
          animation.pause();
          pausedAnimations.push(animation);
        }
      }
    }
  };

  const resumeAnimations = (): void => {
    freezeStyle?.remove();
    freezeStyle = null;
    for (const animation of pausedAnimations) animation.play();
    pausedAnimations = [];
  };

  const pauseMedia = (): void => {
    const doc = win.document;
    if (!doc) return;
    const elements = doc.querySelectorAll<HTMLMediaElement>("video, audio");
    for (const element of Array.from(elements)) {
      if (element.paused) continue;
      try {
        element.pause();
        pausedMedia.push(element);
      } catch {
        // Some environments stub media elements; leave them alone.
      }
    }
  };

  const resumeMedia = (): void => {
    for (const element of pausedMedia) {
      try {
        const result = element.play() as Promise<void> | undefined;
        if (result && typeof result.catch === "function") {
          result.catch(() => undefined);
        }
      } catch {
        // Autoplay restrictions or stubs; the pause was still undone above.
      }
    }
    pausedMedia = [];
  };

  // --- console and error capture -------------------------------------------

  win.console.error = (...args: unknown[]): void => {
    record(args.map(describe).join(" "));
    native.consoleError(...args);
  };

  // Capture phase so resource load failures (which do not bubble) are seen.
  win.addEventListener(
    "error",
    (event: Event): void => {
      const errorEvent = event as ErrorEvent;
      if (typeof errorEvent.message === "string" && errorEvent.message !== "") {
        record(errorEvent.message);
        return;
      }
      const target = event.target as { src?: string; href?: string } | null;
      const url = target && (target.src || target.href);
      if (url) record(`Failed to load resource: ${url}`);
    },
    true,
  );

  win.addEventListener("unhandledrejection", (event: Event): void => {
    const reason = (event as PromiseRejectionEvent).reason;
    record(`Unhandled promise rejection: ${describe(reason)}`);
  });

  // --- public surface --------------------------------------------------------

  const freeze = (): boolean => {
    if (frozen) return false;
    frozen = true;
    for (const entry of intervals.values()) {
      if (entry.nativeId !== null) {
        native.clearInterval(entry.nativeId);
        entry.nativeId = null;
      }
    }
    for (const entry of timeouts.values()) {
      entry.remainingMs = Math.max(0, entry.dueAt - now());
      if (entry.nativeId !== null) {
        native.clearTimeout(entry.nativeId);
        entry.nativeId = null;
      }
    }
    for (const entry of frames.values()) {
      if (entry.nativeId !== null) {
        if (entry.viaTimeout) native.clearTimeout(entry.nativeId);
        else if (native.cancelAnimationFrame) native.cancelAnimationFrame(entry.nativeId);
        entry.nativeId = null;
      }
    }
    pauseAnimations();
    pauseMedia();
    return true;
  };

  const unfreeze = (): boolean => {
    if (!frozen) return false;
    frozen = false;
    for (const entry of intervals.values()) {
      if (entry.nativeId === null) startInterval(entry);
    }
    for (const [handle, entry] of timeouts) {
      if (entry.nativeId !== null) continue;
      const remaining = entry.remainingMs ?? Math.max(0, entry.dueAt - now());
      entry.dueAt = now() + remaining;
      entry.remainingMs = null;
      armTimeout(handle, entry, remaining);
    }
    for (const [handle, entry] of frames) {
      if (entry.nativeId === null) scheduleFrame(handle, entry);
    }
    resumeAnimations();
    resumeMedia();
    return true;
  };

  return {
    freeze,
    unfreeze,
    frozen: () => frozen,
    census: (): TimerCensus => ({
      intervals: intervals.size,
      timeouts: timeouts.size,
      animation_frames: frames.size,
    }),
    collectConsoleErrors: (): string[] => errorRecords.slice(),
  };
}

export function install(win: Window & typeof globalThis): Instrumentation {
  const carrier = win as unknown as Record<string, unknown>;
  const existing = carrier[INSTRUMENTATION_GLOBAL];
  if (existing) return existing as Instrumentation;
  const api = createInstrumentation(win);
  Object.defineProperty(win, INSTRUMENTATION_GLOBAL, {
    value: api,
    configurable: false,
    enumerable: false,
    writable: false,
  });
  return api;
}
