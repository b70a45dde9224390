/**
 * Camera pose math for the navigator. Quaternions are [w, x, y, z] to
 * match the render service.
 */

export type Quat = [number, number, number, number];
export type Vec3 = [number, number, number];

export interface Pose {
  translation: Vec3;
  quaternion: Quat;
}

export interface Bounds {
  min: Vec3;
  max: Vec3;
}

export const IDENTITY: Quat = [1, 0, 0, 0];

export function qmul(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function qnormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

/** Rotation of `angle` radians about a unit axis. */
export function axisAngle(axis: Vec3, angle: number): Quat {
  const h = angle / 2;
  const s = Math.sin(h);
  return [Math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s];
}

/** Body-frame rotation increment: the new attitude is q * inc, so equal
 * and opposite increments cancel exactly. */
export function rotateBody(q: Quat, axis: Vec3, angle: number): Quat {
  return qnormalize(qmul(q, axisAngle(axis, angle)));
}

export function clampToBounds(t: Vec3, bounds: Bounds): Vec3 {
  const out: Vec3 = [0, 0, 0];
  for (let i = 0; i < 3; i++) {
    out[i] = Math.min(Math.max(t[i], bounds.min[i]), bounds.max[i]);
  }
  return out;
}

export function poseEquals(a: Pose, b: Pose, tol = 1e-12): boolean {
  for (let i = 0; i < 3; i++) {
    if (Math.abs(a.translation[i] - b.translation[i]) > tol) return false;
  }
  for (let i = 0; i < 4; i++) {
    if (Math.abs(a.quaternion[i] - b.quaternion[i]) > tol) return false;
  }
  return true;
}

export function clonePose(p: Pose): Pose {
  return {
    translation: [...p.translation] as Vec3,
    quaternion: [...p.quaternion] as Quat,
  };
}
