// Top-down 2D plan of the room: heat overlay (blue cold to red hot), zone
// outlines, kind-coded entity markers, lights tinted by their current state,
// and yellow markers on hotspot cells.

import { HOTSPOT_COLOR, heatCss, lightCss, normalizeCells } from "./colormap.js";
import type { ConsoleViewModel } from "./viewmodel.js";
import type { ZoneWire } from "./protocol.js";

const ENTITY_COLORS: Record<string, string> = {
  performer: "#ffffff",
  audience: "#9ecbff",
  virtual: "#b7f7c3",
};

export function renderRoomView(canvas: HTMLCanvasElement, vm: ConsoleViewModel): void {
  const ctx = canvas.getContext("2d");
  if (!ctx || !vm.hello) return;
  const { width: roomW, height: roomH } = vm.hello.room;
  const scale = Math.min(canvas.width / roomW, canvas.height / roomH);
  const toX = (x: number) => x * scale;
  const toY = (y: number) => y * scale;

  ctx.fillStyle = "#10141a";
  ctx.fillRect(0, 0, canvas.width, canvas.height);

  if (vm.heatgrid) {
    const { cols, rows, cells } = vm.heatgrid;
    const normalized = normalizeCells(cells);
    const cw = (roomW / cols) * scale;
    const ch = (roomH / rows) * scale;
    for (let row = 0; row < rows; row++) {
      for (let col = 0; col < cols; col++) {
        const v = normalized[row * cols + col];
        if (v <= 0) continue;
        ctx.fillStyle = heatCss(v, 0.55);
        ctx.fillRect(col * cw, row * ch, cw + 0.5, ch + 0.5);
      }
    }
  }

  ctx.strokeStyle = "#3a4454";
  ctx.lineWidth = 2;
  ctx.strokeRect(0, 0, toX(roomW), toY(roomH));

  for (const zone of vm.hello.zones) {
    drawZone(ctx, zone, scale);
  }

  if (vm.snapshot) {
    for (const [id, light] of Object.entries(vm.snapshot.lights)) {
      const actuator = vm.hello.actuators.find((a) => a.id === id);
      const zone = actuator?.zone
        ? vm.hello.zones.find((z) => z.id === actuator.zone)
        : undefined;
      const [x, y] = zone ? zoneCenter(zone) : [roomW - 0.6, 0.6];
      ctx.beginPath();
      ctx.arc(toX(x), toY(y), 9, 0, Math.PI * 2);
      ctx.fillStyle = lightCss(light.on, light.bri, light.hue, light.sat);
      ctx.fill();
      ctx.strokeStyle = "#c9d4e3";
      ctx.lineWidth = 1.5;
      ctx.stroke();
    }

    for (const entity of vm.snapshot.entities) {
      ctx.beginPath();
      ctx.arc(toX(entity.x), toY(entity.y), 6, 0, Math.PI * 2);
      ctx.fillStyle = ENTITY_COLORS[entity.kind] ?? "#cccccc";
      ctx.fill();
      ctx.fillStyle = "#e8edf5";
      ctx.font = "10px sans-serif";
      ctx.fillText(entity.id, toX(entity.x) + 8, toY(entity.y) - 6);
    }

    for (const hotspot of vm.snapshot.hotspots) {
      if (hotspot.x == null || hotspot.y == null) continue;
      ctx.beginPath();
      ctx.arc(toX(hotspot.x), toY(hotspot.y), 7, 0, Math.PI * 2);
      ctx.strokeStyle = HOTSPOT_COLOR;
      ctx.lineWidth = 3;
      ctx.stroke();
    }
  }
}

function zoneCenter(zone: ZoneWire): [number, number] {
  if (zone.shape.kind === "circle") {
    return zone.shape.center;
  }
  const [x0, y0] = zone.shape.min;
  const [x1, y1] = zone.shape.max;
  return [(x0 + x1) / 2, (y0 + y1) / 2];
}

function drawZone(ctx: CanvasRenderingContext2D, zone: ZoneWire, scale: number): void {
  ctx.strokeStyle = "#5b6b82";
  ctx.lineWidth = 1;
  ctx.setLineDash([5, 4]);
  ctx.beginPath();
  if (zone.shape.kind === "rectangle") {
    const [x0, y0] = zone.shape.min;
    const [x1, y1] = zone.shape.max;
    ctx.rect(x0 * scale, y0 * scale, (x1 - x0) * scale, (y1 - y0) * scale);
  } else {
    const [cx, cy] = zone.shape.center;
    ctx.arc(cx * scale, cy * scale, zone.shape.radius * scale, 0, Math.PI * 2);
  }
  ctx.stroke();
  ctx.setLineDash([]);
  ctx.fillStyle = "#8494ab";
  ctx.font = "11px sans-serif";
  const [lx, ly] = zoneCenter(zone);
  ctx.fillText(zone.name, lx * scale + 4, ly * scale + 4);
}
