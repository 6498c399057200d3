//! Manufactured solutions and source closures for the verification studies
//! of both deterministic modular solvers.

use std::f64::consts::PI;

// --- thermal-neutronics fields ---

/// Manufactured temperature (2 + cos(pi x1))^2 - 1.
pub fn tn_t_star(x: &[f64; 2]) -> f64 {
    let c = (PI * x[0]).cos();
    (2.0 + c) * (2.0 + c) - 1.0
}

/// Manufactured neutron flux 3 + cos(2 pi x2).
pub fn tn_phi_star(x: &[f64; 2]) -> f64 {
    3.0 + (2.0 * PI * x[1]).cos()
}

/// Temperature-equation source, given the transmittance value at the point.
pub fn tn_f_t_star(x: &[f64; 2], h_t: f64, e_t: f64) -> f64 {
    let c1 = (PI * x[0]).cos();
    let c2 = (2.0 * PI * x[0]).cos();
    2.0 * PI * PI * (2.0 * c1 + c2) + h_t * ((2.0 + c1) * (2.0 + c1) - 1.0)
        - e_t * (3.0 + (2.0 * PI * x[1]).cos()) / (2.0 + c1)
}

/// Flux-equation source, given the cross-section value at the point.
pub fn tn_f_phi_star(x: &[f64; 2], sigma: f64) -> f64 {
    let c1 = (PI * x[0]).cos();
    let c2y = (2.0 * PI * x[1]).cos();
    4.0 * PI * PI * (2.0 + c1) * c2y + sigma * (3.0 + c2y) / (2.0 + c1)
}

// --- Boussinesq fields ---

/// Manufactured horizontal velocity -sin^2(pi x1) sin(2 pi x2).
pub fn bq_u1_star(x: &[f64; 2]) -> f64 {
    let s = (PI * x[0]).sin();
    -s * s * (2.0 * PI * x[1]).sin()
}

/// Manufactured vertical velocity sin(2 pi x1) sin^2(pi x2).
pub fn bq_u2_star(x: &[f64; 2]) -> f64 {
    let s = (PI * x[1]).sin();
    (2.0 * PI * x[0]).sin() * s * s
}

/// Manufactured pressure cos(pi x1) cos(pi x2).
pub fn bq_p_star(x: &[f64; 2]) -> f64 {
    (PI * x[0]).cos() * (PI * x[1]).cos()
}

/// Manufactured temperature cos(pi x1 / 2) T_h(x2), with the hot-wall profile
/// supplied by the caller.
pub fn bq_t_star(x: &[f64; 2], t_h: f64) -> f64 {
    (0.5 * PI * x[0]).cos() * t_h
}

/// Analytic gradient pieces of the manufactured velocity field.
fn bq_velocity_derivatives(x: &[f64; 2]) -> (f64, f64, f64, f64, f64, f64) {
    let (x1, x2) = (x[0], x[1]);
    let s1 = (PI * x1).sin();
    let s2 = (PI * x2).sin();
    let s21 = (2.0 * PI * x1).sin();
    let s22 = (2.0 * PI * x2).sin();
    let c21 = (2.0 * PI * x1).cos();
    let c22 = (2.0 * PI * x2).cos();
    let u1 = -s1 * s1 * s22;
    let u2 = s21 * s2 * s2;
    // du1/dx1 = -pi sin(2 pi x1) sin(2 pi x2)
    let du1dx = -PI * s21 * s22;
    // du1/dx2 = -2 pi sin^2(pi x1) cos(2 pi x2)
    let du1dy = -2.0 * PI * s1 * s1 * c22;
    // du2/dx1 = 2 pi cos(2 pi x1) sin^2(pi x2)
    let du2dx = 2.0 * PI * c21 * s2 * s2;
    // du2/dx2 = pi sin(2 pi x1) sin(2 pi x2)
    let du2dy = PI * s21 * s22;
    (u1, u2, du1dx, du1dy, du2dx, du2dy)
}

/// Momentum source vector that makes the manufactured fields solve the
/// modified momentum equations: the negated residual of the unmodified
/// operator at the exact solution.
pub fn bq_f_u_star(x: &[f64; 2], pr: f64, ra: f64, t_h: f64) -> [f64; 2] {
    let (x1, x2) = (x[0], x[1]);
    let (u1, u2, du1dx, du1dy, du2dx, du2dy) = bq_velocity_derivatives(x);
    let conv_x = u1 * du1dx + u2 * du1dy;
    let conv_y = u1 * du2dx + u2 * du2dy;
    let dpdx = -PI * (PI * x1).sin() * (PI * x2).cos();
    let dpdy = -PI * (PI * x1).cos() * (PI * x2).sin();
    let s1 = (PI * x1).sin();
    let s2 = (PI * x2).sin();
    let s21 = (2.0 * PI * x1).sin();
    let s22 = (2.0 * PI * x2).sin();
    let c21 = (2.0 * PI * x1).cos();
    let c22 = (2.0 * PI * x2).cos();
    let lap_u1 = -2.0 * PI * PI * c21 * s22 + 4.0 * PI * PI * s1 * s1 * s22;
    let lap_u2 = 2.0 * PI * PI * c22 * s21 - 4.0 * PI * PI * s2 * s2 * s21;
    let t = bq_t_star(x, t_h);
    [
        -conv_x - dpdx + pr * lap_u1,
        -conv_y - dpdy + pr * lap_u2 + pr * ra * t,
    ]
}

/// Temperature source making the manufactured fields solve the modified
/// energy equation; needs the hot-wall profile and its first two x2
/// derivatives at the point.
pub fn bq_f_t_star(x: &[f64; 2], t_h: f64, dt_h: f64, ddt_h: f64) -> f64 {
    let (x1, _x2) = (x[0], x[1]);
    let s1 = (PI * x1).sin();
    let s21 = (2.0 * PI * x1).sin();
    let s22 = (2.0 * PI * x[1]).sin();
    let half = 0.5 * PI * x1;
    -0.5 * PI * (s1 * s1 * s22 * half.sin() + 0.5 * PI * half.cos()) * t_h
        - s21 * half.cos() * (PI * x[1]).sin().powi(2) * dt_h
        + half.cos() * ddt_h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn lcg(state: &mut u64) -> f64 {
        *state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (*state >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn tn_exact_values() {
        assert_abs_diff_eq!(tn_t_star(&[0.0, 0.3]), 8.0, epsilon = 1e-14);
        assert_abs_diff_eq!(bq_u1_star(&[0.5, 0.5]), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn tn_sources_cancel_modified_residual() {
        // analytic derivatives: residuals of the modified system vanish at
        // 100 random points and random field values
        let mut state = 11u64;
        let e_t = 5.8;
        for _ in 0..100 {
            let x = [lcg(&mut state), lcg(&mut state)];
            let h_t = 5.0 + 20.0 * lcg(&mut state);
            let sigma = 5.0 + 20.0 * lcg(&mut state);
            let c1 = (PI * x[0]).cos();
            let t = tn_t_star(&x);
            let phi = tn_phi_star(&x);
            // lap T* = -2 pi^2 (2 cos(pi x1) + cos(2 pi x1))
            let lap_t = -2.0 * PI * PI * (2.0 * c1 + (2.0 * PI * x[0]).cos());
            let res_t = lap_t - h_t * t + e_t * phi / (t + 1.0).sqrt() + tn_f_t_star(&x, h_t, e_t);
            assert_abs_diff_eq!(res_t, 0.0, epsilon = 1e-8);
            // div(sqrt(T+1) grad phi) with sqrt(T*+1) = 2 + cos(pi x1)
            let div_flux = -(2.0 + c1) * 4.0 * PI * PI * (2.0 * PI * x[1]).cos();
            let res_phi = div_flux - sigma * phi / (t + 1.0).sqrt() + tn_f_phi_star(&x, sigma);
            assert_abs_diff_eq!(res_phi, 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn bq_momentum_source_cancels_residual() {
        let mut state = 23u64;
        let pr = 0.71;
        for _ in 0..100 {
            let x = [lcg(&mut state), lcg(&mut state)];
            let ra = 800.0 + 400.0 * lcg(&mut state);
            let t_h = 0.5 + lcg(&mut state);
            let f = bq_f_u_star(&x, pr, ra, t_h);
            let (u1, u2, du1dx, du1dy, du2dx, du2dy) = bq_velocity_derivatives(&x);
            let dpdx = -PI * (PI * x[0]).sin() * (PI * x[1]).cos();
            let dpdy = -PI * (PI * x[0]).cos() * (PI * x[1]).sin();
            let s1 = (PI * x[0]).sin();
            let s2 = (PI * x[1]).sin();
            let lap_u1 = -2.0 * PI * PI * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).sin()
                + 4.0 * PI * PI * s1 * s1 * (2.0 * PI * x[1]).sin();
            let lap_u2 = 2.0 * PI * PI * (2.0 * PI * x[1]).cos() * (2.0 * PI * x[0]).sin()
                - 4.0 * PI * PI * s2 * s2 * (2.0 * PI * x[0]).sin();
            let t = bq_t_star(&x, t_h);
            let res_x = u1 * du1dx + u2 * du1dy + dpdx - pr * lap_u1 + f[0];
            let res_y = u1 * du2dx + u2 * du2dy + dpdy - pr * lap_u2 - pr * ra * t + f[1];
            assert_abs_diff_eq!(res_x, 0.0, epsilon = 1e-8);
            assert_abs_diff_eq!(res_y, 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn bq_temperature_source_cancels_residual() {
        // use a concrete smooth hot-wall profile and finite differences to
        // cross-check the analytic derivative arguments
        let mut state = 37u64;
        for _ in 0..100 {
            let x = [lcg(&mut state), lcg(&mut state)];
            let th = |y: f64| 1.0 + 0.4 * (PI * y).sin().powi(2) * (1.3 * y).cos();
            let eps = 1e-5;
            let t_h = th(x[1]);
            let dt_h = (th(x[1] + eps) - th(x[1] - eps)) / (2.0 * eps);
            let ddt_h = (th(x[1] + eps) - 2.0 * t_h + th(x[1] - eps)) / (eps * eps);
            let f = bq_f_t_star(&x, t_h, dt_h, ddt_h);
            let (u1, u2, ..) = bq_velocity_derivatives(&x);
            // grad/laplacian of t* = cos(pi x1/2) T_h(x2) by product rule
            let half = 0.5 * PI * x[0];
            let dtdx = -0.5 * PI * half.sin() * t_h;
            let dtdy = half.cos() * dt_h;
            let lap_t = -0.25 * PI * PI * half.cos() * t_h + half.cos() * ddt_h;
            let res = u1 * dtdx + u2 * dtdy - lap_t + f;
            assert!(res.abs() <= 1e-5, "res={res}");
        }
    }

    #[test]
    fn divergence_free_velocity() {
        let mut state = 91u64;
        for _ in 0..50 {
            let x = [lcg(&mut state), lcg(&mut state)];
            let (_, _, du1dx, _, _, du2dy) = bq_velocity_derivatives(&x);
            assert_abs_diff_eq!(du1dx + du2dy, 0.0, epsilon = 1e-12);
        }
    }
}
