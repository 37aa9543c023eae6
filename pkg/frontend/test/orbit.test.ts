import { describe, expect, it } from "vitest";

import { normalizeAngle, OrbitCamera } from "../src/orbit.js";

describe("OrbitCamera", () => {
  it("maps a full-circle drag back to the start", () => {
    const cam = new OrbitCamera(0.5, 0.2, 4);
    cam.drag(200 * Math.PI * 2, 0); // 2*pi radians at 200 px/rad
    expect(cam.theta).toBeCloseTo(0.5, 10);
  });

  it("clamps elevation away from the poles", () => {
    const cam = new OrbitCamera();
    cam.drag(0, 1e6);
    expect(cam.phi).toBeLessThan(Math.PI / 2);
    cam.drag(0, -1e7);
    expect(cam.phi).toBeGreaterThan(-Math.PI / 2);
  });

  it("wheel zoom keeps radius positive", () => {
    const cam = new OrbitCamera();
    cam.wheel(-1e6);
    expect(cam.radius).toBeGreaterThan(0);
    cam.wheel(1e6);
    expect(cam.radius).toBeLessThanOrEqual(100);
  });

  it("pose serializes as theta,phi,radius", () => {
    const cam = new OrbitCamera(1, 0.25, 4);
    const parts = cam.pose().split(",").map(Number);
    expect(parts).toHaveLength(3);
    expect(parts[0]).toBeCloseTo(1, 4);
    expect(parts[2]).toBeCloseTo(4, 4);
  });

  it("normalizeAngle wraps negatives", () => {
    expect(normalizeAngle(-Math.PI)).toBeCloseTo(Math.PI, 10);
  });
});
