import { fetchMeta, requestRender, serviceUrl, RenderResponse } from "./api";
import { Pose } from "./pose";
import { applyKey, initialState, RenderScheduler, ViewerState } from "./viewer";
import { colorize } from "./colormap";

const $rgb = document.getElementById("rgb") as HTMLImageElement;
const $depth = document.getElementById("depth") as HTMLCanvasElement;
const $conf = document.getElementById("confidence") as HTMLImageElement;
const $readout = document.getElementById("readout") as HTMLPreElement;
const $banner = document.getElementById("banner") as HTMLDivElement;
const $badge = document.getElementById("badge") as HTMLSpanElement;
const $stats = document.getElementById("stats") as HTMLSpanElement;

const base = serviceUrl(location.search);

function showBanner(text: string) {
  $banner.textContent = text;
  $banner.style.display = "block";
}

function fmt(x: number): string {
  return (x >= 0 ? " " : "") + x.toFixed(3);
}

function showReadout(pose: Pose) {
  const [x, y, z] = pose.translation;
  const [qw, qx, qy, qz] = pose.quaternion;
  $readout.textContent =
    `x ${fmt(x)}  y ${fmt(y)}  z ${fmt(z)}\n` +
    `q ${fmt(qw)} ${fmt(qx)} ${fmt(qy)} ${fmt(qz)}`;
}

/** Decode the grayscale depth PNG and repaint it through the colormap. */
function paintDepth(pngBase64: string) {
  const img = new Image();
  img.onload = () => {
    const n = img.naturalWidth;
    $depth.width = n;
    $depth.height = img.naturalHeight;
    const ctx = $depth.getContext("2d");
    if (!ctx) return;
    ctx.drawImage(img, 0, 0);
    const data = ctx.getImageData(0, 0, $depth.width, $depth.height);
    const px = data.data;
    for (let i = 0; i < px.length; i += 4) {
      const [r, g, b] = colorize(px[i] / 255);
      px[i] = r;
      px[i + 1] = g;
      px[i + 2] = b;
    }
    ctx.putImageData(data, 0, 0);
  };
  img.src = `data:image/png;base64,${pngBase64}`;
}

function applyResponse(pose: Pose, response: RenderResponse) {
  $rgb.src = `data:image/png;base64,${response.rgb_png}`;
  paintDepth(response.depth_png);
  $conf.src = `data:image/png;base64,${response.confidence_png}`;
  showReadout(pose);
  $stats.textContent = `${response.render_ms.toFixed(1)} ms`;
  $badge.style.display = "none";
}

function renderFailed() {
  // keep the previous frame on screen, just flag it as stale
  $badge.style.display = "inline";
}

async function start() {
  let state: ViewerState;
  try {
    const meta = await fetchMeta(base);
    state = initialState(meta);
  } catch (err) {
    showBanner(`render service unreachable at ${base}: ${err}`);
    return;
  }

  const scheduler = new RenderScheduler(
    (pose) => requestRender(base, pose),
    { applied: applyResponse, failed: renderFailed },
    state,
  );

  window.addEventListener("keydown", (event) => {
    if (applyKey(state, event.key)) {
      event.preventDefault();
      scheduler.submit(state.pose);
    }
  });

  scheduler.submit(state.pose);
}

void start();
