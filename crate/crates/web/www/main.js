import init, { Demo } from "./pkg/refnpr_web.js";

const $ = (id) => document.getElementById(id);

function blit(canvas, size, rgba) {
  canvas.width = size;
  canvas.height = size;
  const ctx = canvas.getContext("2d");
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), size, size), 0, 0);
}

await init();
const demo = new Demo(32, 64);
const status = $("status");

function draw() {
  const az = Number($("az").value);
  const el = Number($("el").value);
  $("az-v").textContent = `${az}°`;
  $("el-v").textContent = `${el}°`;
  $("hue-v").textContent = `${$("hue").value}°`;
  blit($("color"), demo.size, demo.render(az, el));
  blit($("depth"), demo.size, demo.depth(az, el));
}

for (const id of ["az", "el", "hue"]) {
  $(id).addEventListener("input", draw);
}

$("stylize").addEventListener("click", () => {
  status.textContent = "stylizing…";
  // Let the status paint before the synchronous optimization starts.
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const n = demo.propagateHue(Number($("az").value), Number($("el").value), Number($("hue").value));
      status.textContent = `${n} pseudo-rays, ${((performance.now() - t0) / 1000).toFixed(1)} s`;
      draw();
    } catch (e) {
      status.textContent = `failed: ${e}`;
    }
  }, 20);
});

$("reset").addEventListener("click", () => {
  demo.reset();
  status.textContent = "photoreal field";
  draw();
});

status.textContent = "photoreal field";
draw();
