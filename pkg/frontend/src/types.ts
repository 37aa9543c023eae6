export interface LadderLevel {
  qp: number;
  sizes: number[];
  mean_frame_kb: number;
}

export interface Manifest {
  scene_id: string;
  gop_count: number;
  gop_length: number;
  fps: number;
  qp_ladder: LadderLevel[];
  cameras: {
    intrinsics?: number[][];
    width?: number;
    height?: number;
    orbit_center?: number[];
    orbit_radius?: number;
  };
  segment_template: string;
}

export type BitrateMode = "auto" | number; // pinned QP when numeric

export interface ViewerStats {
  lastQp: number;
  kbPerFrame: number;
  renderMs: number;
  stallCount: number;
  staleDropped: number;
  errorCount: number;
}

export interface ViewerState {
  theta: number;
  phi: number;
  radius: number;
  target: [number, number, number];
  gop: number;
  frame: number;
  mode: BitrateMode;
  stats: ViewerStats;
}
