import { Pose, Quat, Vec3 } from "./pose";

export interface Meta {
  bounds: { min: Vec3; max: Vec3 };
  depth_range: [number, number];
  resolution: number;
  slices: number;
  input_mode: string;
}

export interface RenderResponse {
  rgb_png: string;
  depth_png: string;
  confidence_png: string;
  render_ms: number;
  clamped: boolean;
  pose: { translation: Vec3; quaternion: Quat };
}

/** Service base URL: ?service=... query parameter, local default otherwise. */
export function serviceUrl(search: string): string {
  const url = new URLSearchParams(search).get("service");
  return (url ?? "http://127.0.0.1:8000").replace(/\/+$/, "");
}

export async function fetchMeta(base: string): Promise<Meta> {
  const res = await fetch(`${base}/meta`);
  if (!res.ok) throw new Error(`meta request failed: ${res.status}`);
  const meta = (await res.json()) as Meta;
  if (!meta.bounds || meta.bounds.min.length !== 3 || meta.bounds.max.length !== 3) {
    throw new Error("malformed meta payload");
  }
  return meta;
}

export async function requestRender(base: string, pose: Pose): Promise<RenderResponse> {
  const res = await fetch(`${base}/render`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({
      translation: pose.translation,
      quaternion: pose.quaternion,
    }),
  });
  if (!res.ok) throw new Error(`render request failed: ${res.status}`);
  return (await res.json()) as RenderResponse;
}
