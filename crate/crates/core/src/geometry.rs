//! In-plane vector helpers: periodic minimal-image wrapping and the
//! beam-aligned frame.
//!
//! The beam-aligned frame has its x-axis along the horizontal projection of
//! the ion travel direction (azimuth angle measured in the lab frame).
//! Depth (z) is unchanged by the frame rotation.

pub type Vec2 = [f64; 2];
pub type Vec3 = [f64; 3];

/// Wrap one displacement component into [-extent/2, extent/2].
pub fn wrap_component(delta: f64, extent: f64) -> f64 {
    delta - extent * (delta / extent).round()
}

/// Minimal-image wrap of an in-plane separation for a periodic cell.
pub fn wrap_in_plane(delta: Vec2, cell: Vec2) -> Vec2 {
    [
        wrap_component(delta[0], cell[0]),
        wrap_component(delta[1], cell[1]),
    ]
}

/// In-plane part of a 3-vector.
pub fn in_plane(v: Vec3) -> Vec2 {
    [v[0], v[1]]
}

/// Rotate a lab-frame in-plane vector into the beam-aligned frame.
pub fn to_beam_frame(v: Vec2, azimuth_rad: f64) -> Vec2 {
    let (s, c) = azimuth_rad.sin_cos();
    [v[0] * c + v[1] * s, -v[0] * s + v[1] * c]
}

/// Rotate a beam-frame in-plane vector back into the lab frame.
pub fn to_lab_frame(v: Vec2, azimuth_rad: f64) -> Vec2 {
    let (s, c) = azimuth_rad.sin_cos();
    [v[0] * c - v[1] * s, v[0] * s + v[1] * c]
}

pub fn norm2(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_centered() {
        assert_eq!(wrap_component(0.0, 10.0), 0.0);
        assert_eq!(wrap_component(6.0, 10.0), -4.0);
        assert_eq!(wrap_component(-6.0, 10.0), 4.0);
        assert_eq!(wrap_component(10.0, 10.0), 0.0);
        // half-cell boundary maps to a single deterministic image
        assert_eq!(wrap_component(5.0, 10.0), -5.0);
    }

    #[test]
    fn beam_frame_roundtrip() {
        let v = [1.25, -0.5];
        let az = 0.7;
        let w = to_lab_frame(to_beam_frame(v, az), az);
        assert!((w[0] - v[0]).abs() < 1e-15);
        assert!((w[1] - v[1]).abs() < 1e-15);
    }

    #[test]
    fn beam_frame_aligns_x_with_azimuth() {
        // a lab vector pointing along the beam azimuth becomes +x in the beam frame
        let az = std::f64::consts::FRAC_PI_3;
        let v = [az.cos(), az.sin()];
        let b = to_beam_frame(v, az);
        assert!((b[0] - 1.0).abs() < 1e-15);
        assert!(b[1].abs() < 1e-15);
    }
}
