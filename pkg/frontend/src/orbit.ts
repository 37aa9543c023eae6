// Orbit camera: drag maps to (d-theta, d-phi), wheel to radius.
// Pose serializes as the server's "theta,phi,radius" shorthand.

const TWO_PI = Math.PI * 2;
const PHI_LIMIT = Math.PI / 2 - 0.05; // keep away from the poles

export class OrbitCamera {
  theta: number;
  phi: number;
  radius: number;

  constructor(theta = 0, phi = 0.3, radius = 4) {
    this.theta = theta;
    this.phi = phi;
    this.radius = radius;
  }

  drag(dxPixels: number, dyPixels: number, pixelsPerRadian = 200): void {
    this.theta = normalizeAngle(this.theta + dxPixels / pixelsPerRadian);
    this.phi = clamp(this.phi + dyPixels / pixelsPerRadian, -PHI_LIMIT, PHI_LIMIT);
  }

  wheel(deltaY: number): void {
    this.radius = clamp(this.radius * Math.exp(deltaY * 1e-3), 0.2, 100);
  }

  pose(): string {
    return `${this.theta.toFixed(5)},${this.phi.toFixed(5)},${this.radius.toFixed(4)}`;
  }
}

export function normalizeAngle(a: number): number {
  let out = a % TWO_PI;
  if (out < 0) out += TWO_PI;
  return out;
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(Math.max(v, lo), hi);
}
