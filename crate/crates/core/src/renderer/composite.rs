use crate::diffnet::Real;
use crate::error::{Error, Result};

/// Opacity below which a ray counts as empty for the depth convention.
pub const EMPTY_OPACITY: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput<T> {
    pub color: [T; 3],
    pub weights: Vec<T>,
    /// `τ_i`, the transmittance arriving at sample `i`; `τ_0 = 1`.
    pub transmittance: Vec<T>,
    pub final_transmittance: T,
    pub opacity: T,
    pub expected_depth: T,
}

impl<T: Real> RenderOutput<T> {
    /// Fills in the expected depth. Rays that stay transparent report `far`;
    /// otherwise leftover transmittance lands on the far plane.
    pub fn with_depth(mut self, depths: &[f64], far: f64) -> Self {
        self.expected_depth = if self.opacity.as_f64() < EMPTY_OPACITY {
            T::lit(far)
        } else {
            let d: T = self
                .weights
                .iter()
                .zip(depths)
                .map(|(&w, &b)| w * T::lit(b))
                .sum();
            d + self.final_transmittance * T::lit(far)
        };
        self
    }
}

/// Emission-absorption quadrature over samples in front-to-back order.
pub fn composite<T: Real>(sigmas: &[T], colors: &[[T; 3]], deltas: &[T]) -> Result<RenderOutput<T>> {
    let n = sigmas.len();
    if colors.len() != n || deltas.len() != n {
        return Err(Error::Usage(format!(
            "composite got {n} densities, {} colors, {} deltas",
            colors.len(),
            deltas.len()
        )));
    }
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = Vec::with_capacity(n);
    let mut color = [T::zero(); 3];
    let mut tau = T::one();
    for i in 0..n {
        let s = sigmas[i];
        if !(s >= T::zero()) {
            return Err(Error::Input(format!(
                "negative or NaN density {} at sample {i}",
                s.as_f64()
            )));
        }
        let alpha = -(-(s * deltas[i])).exp_m1();
        let w = tau * alpha;
        transmittance.push(tau);
        weights.push(w);
        for c in 0..3 {
            color[c] += w * colors[i][c];
        }
        tau *= T::one() - alpha;
    }
    let opacity = weights.iter().copied().sum();
    Ok(RenderOutput {
        color,
        weights,
        transmittance,
        final_transmittance: tau,
        opacity,
        expected_depth: T::zero(),
    })
}

/// Gradients of `⟨g, C⟩` w.r.t. densities and colors given a forward
/// result. Returns `(dσ, dc)`.
pub fn composite_backward<T: Real>(
    colors: &[[T; 3]],
    deltas: &[T],
    out: &RenderOutput<T>,
    g: [T; 3],
) -> (Vec<T>, Vec<[T; 3]>) {
    let n = colors.len();
    let dot = |c: &[T; 3]| c[0] * g[0] + c[1] * g[1] + c[2] * g[2];
    let mut dsigma = vec![T::zero(); n];
    let mut dcolor = vec![[T::zero(); 3]; n];
    // suffix = Σ_{j>i} w_j ⟨c_j, g⟩
    let mut suffix = T::zero();
    for i in (0..n).rev() {
        let w = out.weights[i];
        let cg = dot(&colors[i]);
        let tau_next = out.transmittance[i] - w;
        dsigma[i] = deltas[i] * (tau_next * cg - suffix);
        dcolor[i] = [w * g[0], w * g[1], w * g[2]];
        suffix += w * cg;
    }
    (dsigma, dcolor)
}

/// Mask-driven selection between the static and dynamic renders.
#[inline]
pub fn blend<C>(c_static: C, c_dynamic: C, m: f32) -> C {
    if m >= 0.5 {
        c_dynamic
    } else {
        c_static
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::relative_error;
    use proptest::prelude::*;

    #[test]
    fn vacuum() {
        let o = composite(&[0.0f64; 5], &[[1.0; 3]; 5], &[0.2; 5]).unwrap();
        assert_eq!(o.color, [0.0; 3]);
        assert_eq!(o.opacity, 0.0);
        assert_eq!(o.final_transmittance, 1.0);
        assert_eq!(o.with_depth(&[1.0; 5], 7.0).expected_depth, 7.0);
    }

    #[test]
    fn opaque_sample() {
        let o = composite(&[50.0f64], &[[1.0, 0.0, 0.0]], &[1.0]).unwrap();
        assert!((o.color[0] - 1.0).abs() < 1e-12);
        assert!((o.opacity - 1.0).abs() < 1e-12);
        let o = o.with_depth(&[2.5], 7.0);
        assert!((o.expected_depth - 2.5).abs() < 1e-9);
    }

    #[test]
    fn two_samples_by_hand() {
        let o = composite(
            &[2.0f64, 4.0],
            &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            &[0.5, 0.25],
        )
        .unwrap();
        let a = 1.0 - (-1.0f64).exp();
        assert!((o.color[0] - 0.6321).abs() < 1e-4);
        assert!((o.color[1] - 0.2325).abs() < 1e-4);
        assert_eq!(o.color[2], 0.0);
        assert!((o.weights[0] - a).abs() < 1e-15);
        assert!((o.weights[1] - (-1.0f64).exp() * a).abs() < 1e-15);
        assert_eq!(o.transmittance[0], 1.0);
    }

    #[test]
    fn negative_density_is_rejected() {
        assert!(matches!(
            composite(&[0.1f32, -0.1], &[[0.0; 3]; 2], &[1.0; 2]),
            Err(Error::Input(_))
        ));
        assert!(composite(&[0.1f32], &[[0.0; 3]; 2], &[1.0]).is_err());
    }

    #[test]
    fn blend_rule() {
        let (s, d) = ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0]);
        assert_eq!(blend(s, d, 0.7), d);
        assert_eq!(blend(s, d, 0.2), s);
        assert_eq!(blend(s, d, 0.5), d);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let sig = [0.3f64, 1.7, 0.0, 2.2, 0.9];
        let col = [
            [0.1, 0.5, 0.9],
            [0.7, 0.2, 0.4],
            [0.3, 0.3, 0.3],
            [0.9, 0.8, 0.1],
            [0.4, 0.6, 0.2],
        ];
        let del = [0.2, 0.1, 0.3, 0.15, 0.25];
        let g = [0.3, -1.1, 0.7];
        let loss = |s: &[f64], c: &[[f64; 3]]| {
            let o = composite(s, c, &del).unwrap();
            (0..3).map(|k| o.color[k] * g[k]).sum::<f64>()
        };
        let out = composite(&sig, &col, &del).unwrap();
        let (ds, dc) = composite_backward(&col, &del, &out, g);
        let h = 1e-6;
        for i in 0..5 {
            // sample 2 sits at σ = 0; one-sided to stay in the domain
            let (mut p, mut m) = (sig, sig);
            p[i] += h;
            let num = if sig[i] == 0.0 {
                (loss(&p, &col) - loss(&sig, &col)) / h
            } else {
                m[i] -= h;
                (loss(&p, &col) - loss(&m, &col)) / (2.0 * h)
            };
            assert!(relative_error(ds[i], num, 1e-6) < 1e-4, "dσ[{i}] {} vs {num}", ds[i]);
            for k in 0..3 {
                let (mut p, mut m) = (col, col);
                p[i][k] += h;
                m[i][k] -= h;
                let num = (loss(&sig, &p) - loss(&sig, &m)) / (2.0 * h);
                assert!(relative_error(dc[i][k], num, 1e-6) < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn weights_telescope(
            samples in prop::collection::vec((0.0f64..20.0, 0.0f64..1.0, 0.001f64..0.5), 1..128)
        ) {
            let sig: Vec<f64> = samples.iter().map(|s| s.0).collect();
            let col: Vec<[f64; 3]> = samples.iter().map(|s| [s.1; 3]).collect();
            let del: Vec<f64> = samples.iter().map(|s| s.2).collect();
            let o = composite(&sig, &col, &del).unwrap();
            prop_assert!(o.weights.iter().all(|&w| w >= 0.0));
            prop_assert!(o.transmittance.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(o.transmittance.iter().all(|&t| (0.0..=1.0).contains(&t)) && o.transmittance[0] == 1.0);
            prop_assert!((o.opacity - (1.0 - o.final_transmittance)).abs() < 1e-12);
            prop_assert!(o.opacity <= 1.0 + 1e-12);
        }
    }
}
