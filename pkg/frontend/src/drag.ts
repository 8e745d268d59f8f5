// Pointer drags become workspace-frame wrist deltas: screen x/y map to
// workspace x/y at the scene scale, and holding Shift turns vertical drag
// into a z delta. The server applies its own scaling; we send raw meters.

export const PIXELS_PER_METER = 500;

export interface DragState {
  active: boolean;
  originX: number;
  originY: number;
  lastX: number;
  lastY: number;
  zMode: boolean;
}

export function startDrag(x: number, y: number, zMode = false): DragState {
  return { active: true, originX: x, originY: y, lastX: x, lastY: y, zMode };
}

export function moveDrag(state: DragState, x: number, y: number): DragState {
  return { ...state, lastX: x, lastY: y };
}

export function dragDelta(
  state: DragState,
  pixelsPerMeter: number = PIXELS_PER_METER,
): [number, number, number] {
  const dxPx = state.lastX - state.originX;
  const dyPx = state.lastY - state.originY;
  if (state.zMode) {
    // vertical screen motion drives z; up is +z (adding 0 normalizes -0)
    return [0, 0, -dyPx / pixelsPerMeter + 0];
  }
  // screen +x is workspace +x; screen down is workspace -y (top-down view
  // with +y pointing up the screen)
  return [dxPx / pixelsPerMeter + 0, -dyPx / pixelsPerMeter + 0, 0];
}

export function dragMagnitude(state: DragState): number {
  return Math.hypot(state.lastX - state.originX, state.lastY - state.originY);
}
