/**
 * Viewer state machine, kept free of DOM so the input and scheduling
 * behavior is unit-testable. main.ts wires it to the page.
 */

import {
  Bounds,
  IDENTITY,
  Pose,
  Vec3,
  clampToBounds,
  clonePose,
  rotateBody,
} from "./pose";
import { Meta, RenderResponse } from "./api";

export interface ViewerState {
  pose: Pose;
  bounds: Bounds;
  /** meters per keypress */
  stepTranslation: number;
  /** radians per keypress */
  stepRotation: number;
  lastResponse: RenderResponse | null;
  inFlight: boolean;
}

const YAW_AXIS: Vec3 = [0, 0, 1];
const PITCH_AXIS: Vec3 = [0, 1, 0];
const ROLL_AXIS: Vec3 = [1, 0, 0];

/** Start at the center of the trained volume (mid-range altitude), level
 * attitude. Deterministic, so a reload lands on the same pose. */
export function initialState(meta: Meta): ViewerState {
  const { min, max } = meta.bounds;
  const center: Vec3 = [
    (min[0] + max[0]) / 2,
    (min[1] + max[1]) / 2,
    (min[2] + max[2]) / 2,
  ];
  return {
    pose: { translation: center, quaternion: [...IDENTITY] },
    bounds: { min: [...min], max: [...max] },
    stepTranslation: 0.25,
    stepRotation: (5 * Math.PI) / 180,
    lastResponse: null,
    inFlight: false,
  };
}

/**
 * Apply one keypress. WASD translates horizontally (W north = +y), R/F
 * raise and lower, arrows yaw and pitch, Q/E roll. Translation clamps to
 * the trained bounds, so walking into a wall is a no-op. Returns false
 * for keys the viewer does not consume.
 */
export function applyKey(state: ViewerState, key: string): boolean {
  const s = state.stepTranslation;
  const r = state.stepRotation;
  const t = state.pose.translation;
  const q = state.pose.quaternion;
  switch (key.length === 1 ? key.toLowerCase() : key) {
    case "w":
      state.pose.translation = clampToBounds([t[0], t[1] + s, t[2]], state.bounds);
      return true;
    case "s":
      state.pose.translation = clampToBounds([t[0], t[1] - s, t[2]], state.bounds);
      return true;
    case "a":
      state.pose.translation = clampToBounds([t[0] - s, t[1], t[2]], state.bounds);
      return true;
    case "d":
      state.pose.translation = clampToBounds([t[0] + s, t[1], t[2]], state.bounds);
      return true;
    case "r":
      state.pose.translation = clampToBounds([t[0], t[1], t[2] + s], state.bounds);
      return true;
    case "f":
      state.pose.translation = clampToBounds([t[0], t[1], t[2] - s], state.bounds);
      return true;
    case "ArrowLeft":
      state.pose.quaternion = rotateBody(q, YAW_AXIS, r);
      return true;
    case "ArrowRight":
      state.pose.quaternion = rotateBody(q, YAW_AXIS, -r);
      return true;
    case "ArrowUp":
      state.pose.quaternion = rotateBody(q, PITCH_AXIS, r);
      return true;
    case "ArrowDown":
      state.pose.quaternion = rotateBody(q, PITCH_AXIS, -r);
      return true;
    case "q":
      state.pose.quaternion = rotateBody(q, ROLL_AXIS, r);
      return true;
    case "e":
      state.pose.quaternion = rotateBody(q, ROLL_AXIS, -r);
      return true;
    default:
      return false;
  }
}

export type RenderFn = (pose: Pose) => Promise<RenderResponse>;

export interface SchedulerHooks {
  /** Called with the pose a response belongs to, in request order. */
  applied: (pose: Pose, response: RenderResponse) => void;
  failed: (pose: Pose, error: unknown) => void;
}

/**
 * At most one render request is in flight. Poses submitted while one is
 * pending collapse to the most recent, which launches when the current
 * request settles, so a burst of inputs renders the final pose last and
 * the intermediate ones never hit the network.
 */
export class RenderScheduler {
  private pending: Pose | null = null;
  private lastRendered: Pose | null = null;

  constructor(
    private render: RenderFn,
    private hooks: SchedulerHooks,
    private state: ViewerState,
  ) {}

  submit(pose: Pose): void {
    if (this.state.inFlight) {
      this.pending = clonePose(pose);
      return;
    }
    void this.launch(clonePose(pose));
  }

  /** Pose of the most recently applied response, null before the first. */
  rendered(): Pose | null {
    return this.lastRendered;
  }

  /** Resolves when no request is running and nothing is queued. */
  async idle(): Promise<void> {
    while (this.state.inFlight) {
      await this.settled;
    }
  }

  private settled: Promise<void> = Promise.resolve();

  private async launch(pose: Pose): Promise<void> {
    this.state.inFlight = true;
    let release: () => void = () => undefined;
    this.settled = new Promise((resolve) => (release = resolve));
    try {
      const response = await this.render(pose);
      this.lastRendered = pose;
      this.state.lastResponse = response;
      this.hooks.applied(pose, response);
    } catch (err) {
      this.hooks.failed(pose, err);
    } finally {
      this.state.inFlight = false;
      release();
      const next = this.pending;
      this.pending = null;
      if (next !== null) void this.launch(next);
    }
  }
}
