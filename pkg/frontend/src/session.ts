// Client-side session state: what is selected, where the map is
// looking, and the conversion between screen pixels and the global
// zoom-24 pixel grid. Pure state + math, no DOM and no network, so the
// whole thing is unit-testable.

export const MIN_ZOOM = 2;
export const MAX_ZOOM = 19;

/** Logical size of the square map surface in screen pixels. Fixed
 *  rather than measured so coordinate math never depends on layout. */
export const MAP_SIZE = 512;

export const TILE_SPAN = 256; // zoom-16 tile edge, in zoom-24 world pixels
export const WORLD_SPAN = 1 << 24;

export interface Viewport {
  centerX: number; // zoom-24 world pixels
  centerY: number;
  zoom: number; // display zoom, MIN_ZOOM..MAX_ZOOM
}

export interface TilePlacement {
  tileX: number;
  tileY: number;
  screenX: number; // top-left corner on the map surface
  screenY: number;
  size: number; // rendered edge length in screen pixels
}

export function clampZoom(zoom: number): number {
  return Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, Math.round(zoom)));
}

/** Web Mercator, world measured in zoom-24 pixels. */
export function worldToLonLat(x: number, y: number): [number, number] {
  const lon = (x * 360) / WORLD_SPAN - 180;
  const lat = (Math.atan(Math.sinh(Math.PI * (1 - (2 * y) / WORLD_SPAN))) * 180) / Math.PI;
  return [lon, lat];
}

export function lonLatToWorld(lon: number, lat: number): [number, number] {
  const phi = (lat * Math.PI) / 180;
  const x = ((lon + 180) / 360) * WORLD_SPAN;
  const y = ((1 - Math.log(Math.tan(phi) + 1 / Math.cos(phi)) / Math.PI) / 2) * WORLD_SPAN;
  return [x, y];
}

/** Screen pixels per zoom-24 world pixel at a display zoom level. */
export function scaleAt(zoom: number): number {
  return Math.pow(2, zoom - 16);
}

export function screenToWorld(vp: Viewport, sx: number, sy: number): [number, number] {
  const s = scaleAt(vp.zoom);
  return [vp.centerX + (sx - MAP_SIZE / 2) / s, vp.centerY + (sy - MAP_SIZE / 2) / s];
}

export function worldToScreen(vp: Viewport, wx: number, wy: number): [number, number] {
  const s = scaleAt(vp.zoom);
  return [MAP_SIZE / 2 + (wx - vp.centerX) * s, MAP_SIZE / 2 + (wy - vp.centerY) * s];
}

/** Zoom-16 tiles intersecting the viewport, with their screen placement. */
export function visibleTiles(vp: Viewport): TilePlacement[] {
  const s = scaleAt(vp.zoom);
  const half = MAP_SIZE / 2 / s;
  const maxTile = WORLD_SPAN / TILE_SPAN - 1;
  const x0 = Math.max(0, Math.floor((vp.centerX - half) / TILE_SPAN));
  const x1 = Math.min(maxTile, Math.floor((vp.centerX + half) / TILE_SPAN));
  const y0 = Math.max(0, Math.floor((vp.centerY - half) / TILE_SPAN));
  const y1 = Math.min(maxTile, Math.floor((vp.centerY + half) / TILE_SPAN));
  const out: TilePlacement[] = [];
  for (let ty = y0; ty <= y1; ty++) {
    for (let tx = x0; tx <= x1; tx++) {
      const [sx, sy] = worldToScreen(vp, tx * TILE_SPAN, ty * TILE_SPAN);
      out.push({ tileX: tx, tileY: ty, screenX: sx, screenY: sy, size: TILE_SPAN * s });
    }
  }
  return out;
}

export interface OverlaySelection {
  jobId: string | null;
  task: string | null;
  classIndex: number;
  opacity: number; // 0..1
  threshold: number; // 0..1; confidence below it renders transparent
}

export class UiSession {
  projectId: string | null = null;
  experimentId: string | null = null;
  viewport: Viewport;
  overlay: OverlaySelection;
  private listeners: Array<() => void> = [];

  constructor() {
    this.viewport = { centerX: WORLD_SPAN / 2, centerY: WORLD_SPAN / 2, zoom: 4 };
    this.overlay = { jobId: null, task: null, classIndex: 1, opacity: 0.6, threshold: 0.0 };
  }

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  setZoom(zoom: number): void {
    this.viewport.zoom = clampZoom(zoom);
    this.emit();
  }

  zoomBy(delta: number): void {
    this.setZoom(this.viewport.zoom + delta);
  }

  panBy(dxScreen: number, dyScreen: number): void {
    const s = scaleAt(this.viewport.zoom);
    this.viewport.centerX -= dxScreen / s;
    this.viewport.centerY -= dyScreen / s;
    this.emit();
  }

  centerOnTile(tileX: number, tileY: number, zoom = 16): void {
    this.viewport.centerX = (tileX + 0.5) * TILE_SPAN;
    this.viewport.centerY = (tileY + 0.5) * TILE_SPAN;
    this.viewport.zoom = clampZoom(zoom);
    this.emit();
  }

  setOverlay(patch: Partial<OverlaySelection>): void {
    Object.assign(this.overlay, patch);
    this.emit();
  }
}
